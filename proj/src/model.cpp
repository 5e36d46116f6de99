#include "ptq/model.hpp"

#include <algorithm>
#include <cmath>

#include "ptq/error.hpp"
#include "ptq/rng.hpp"

namespace ptq {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || n_blocks == 0 || d_ffn == 0 || vocab == 0 || max_seq == 0) {
    throw ConfigError("model sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
}

std::string to_string(LinearMode m) {
  switch (m) {
    case LinearMode::fp:
      return "fp";
    case LinearMode::weight_only:
      return "weight_only";
    case LinearMode::weight_activation:
      return "weight_activation";
  }
  return "?";
}

// ---------------------------------------------------------------- linear

void QuantizableLinear::set_weight(Matrix w) {
  weight_ = std::move(w);
  restore();
}

void QuantizableLinear::restore() {
  mode_ = LinearMode::fp;
  divisor_.clear();
  w_scaled_ = Matrix();
  w_hat_ = Matrix();
  codes_.reset();
  act_params_.reset();
  act_keep_.clear();
  dynamic_outliers_ = 0;
}

void QuantizableLinear::quantize(LinearMode mode, const QuantSpec& w_spec, const std::optional<QuantSpec>& a_spec,
                                 const LayerArtifacts& art) {
  if (mode == LinearMode::fp) {
    restore();
    return;
  }
  w_spec.validate();
  const std::size_t n = weight_.cols();
  if (mode == LinearMode::weight_activation) {
    if (!a_spec) throw ConfigError(id_ + ": weight-activation mode needs an activation spec");
    a_spec->validate();
    if (!a_spec->dynamic && a_spec->granularity != Granularity::per_tensor) {
      throw ConfigError(id_ + ": static activation quantization is per-tensor only");
    }
    if (!a_spec->dynamic && !art.act_params) {
      throw ConfigError(id_ + ": static activation quantization needs calibrated params");
    }
  }
  if (!art.scale.empty()) {
    if (art.scale.size() != n) throw ConfigError(id_ + ": scale length does not match input width");
    for (std::size_t j = 0; j < n; ++j) {
      if (!(art.scale[j] > 0.0f) || !std::isfinite(art.scale[j])) {
        throw ConfigError(id_ + ": scale entry " + std::to_string(j) + " is not positive");
      }
    }
  }
  for (std::size_t j : art.act_keep) {
    if (j >= n) throw ConfigError(id_ + ": kept activation column out of range");
  }
  if (art.dynamic_outliers > n) throw ConfigError(id_ + ": dynamic outlier count exceeds input width");

  Matrix w_scaled = weight_;
  if (!art.scale.empty()) {
    for (std::size_t i = 0; i < w_scaled.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) w_scaled(i, j) = weight_(i, j) * art.scale[j];
  }

  std::optional<QuantParams> params;
  if (art.reconstruction) {
    const QuantizedTensor& r = *art.reconstruction;
    if (r.rows != weight_.rows() || r.cols != n || !(r.spec == w_spec)) {
      throw ConfigError(id_ + ": reconstruction does not match the layer");
    }
    codes_ = r;
  } else {
    if (art.bounds) {
      if (!(art.bounds->layout == make_layout(w_scaled.rows(), n, w_spec))) {
        throw ConfigError(id_ + ": clip bounds were computed for a different granularity");
      }
      params = to_params(*art.bounds, w_spec);
    }
    codes_ = ptq::quantize(w_scaled, w_spec, params);
  }
  w_hat_ = dequantize(*codes_);
  if (art.plan) w_hat_ = apply_plan(w_hat_, w_scaled, *art.plan);
  for (std::size_t j : art.act_keep)
    for (std::size_t i = 0; i < w_hat_.rows(); ++i) w_hat_(i, j) = w_scaled(i, j);

  mode_ = mode;
  w_spec_ = w_spec;
  a_spec_ = a_spec.value_or(QuantSpec{});
  divisor_ = art.scale;
  w_scaled_ = std::move(w_scaled);
  act_params_ = mode == LinearMode::weight_activation ? art.act_params : std::nullopt;
  act_keep_ = mode == LinearMode::weight_activation ? art.act_keep : std::vector<std::size_t>{};
  dynamic_outliers_ = mode == LinearMode::weight_activation ? art.dynamic_outliers : 0;
}

void QuantizableLinear::load_state(State st) {
  if (st.mode == LinearMode::fp) {
    restore();
    return;
  }
  const std::size_t n = weight_.cols();
  if (st.w_hat.rows() != weight_.rows() || st.w_hat.cols() != n) throw ShapeError(id_ + ": stored W_hat shape mismatch");
  if (!st.divisor.empty() && st.divisor.size() != n) throw ShapeError(id_ + ": stored divisor length mismatch");
  w_scaled_ = weight_;
  if (!st.divisor.empty()) {
    for (std::size_t i = 0; i < w_scaled_.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) w_scaled_(i, j) = weight_(i, j) * st.divisor[j];
  }
  mode_ = st.mode;
  w_spec_ = st.w_spec;
  a_spec_ = st.a_spec;
  divisor_ = std::move(st.divisor);
  w_hat_ = std::move(st.w_hat);
  codes_ = std::move(st.codes);
  act_params_ = st.act_params;
  act_keep_ = std::move(st.act_keep);
  dynamic_outliers_ = st.dynamic_outliers;
}

Matrix QuantizableLinear::quantize_input(const Matrix& x, const std::vector<std::size_t>& keep) const {
  Matrix x0 = x;
  for (std::size_t j : keep)
    for (std::size_t i = 0; i < x0.rows(); ++i) x0(i, j) = 0.0f;
  Matrix xq;
  if (a_spec_.dynamic) {
    xq = fake_quant(x0, a_spec_);
  } else {
    QuantParams p{make_layout(x0.rows(), x0.cols(), a_spec_), {*act_params_}};
    xq = fake_quant(x0, a_spec_, p);
  }
  for (std::size_t j : keep)
    for (std::size_t i = 0; i < xq.rows(); ++i) xq(i, j) = x(i, j);
  return xq;
}

Matrix QuantizableLinear::forward(const Matrix& x) const {
  if (x.cols() != weight_.cols()) {
    throw ShapeError(id_ + ": input width " + std::to_string(x.cols()) + " does not match " +
                     std::to_string(weight_.cols()));
  }
  try {
    if (mode_ == LinearMode::fp) return matmul_nt(x, weight_);
    Matrix xs = x;
    if (!divisor_.empty()) {
      for (std::size_t i = 0; i < xs.rows(); ++i)
        for (std::size_t j = 0; j < xs.cols(); ++j) xs(i, j) = x(i, j) / divisor_[j];
    }
    if (mode_ == LinearMode::weight_only) return matmul_nt(xs, w_hat_);
    if (dynamic_outliers_ == 0) return matmul_nt(quantize_input(xs, act_keep_), w_hat_);
    const auto keep = select_outliers_dynamic(xs, dynamic_outliers_);
    Matrix w_eff = w_hat_;
    for (std::size_t j : keep)
      for (std::size_t i = 0; i < w_eff.rows(); ++i) w_eff(i, j) = w_scaled_(i, j);
    return matmul_nt(quantize_input(xs, keep), w_eff);
  } catch (const NumericalError& e) {
    throw NumericalError(id_ + ": " + e.what());
  }
}

// ---------------------------------------------------------------- kv cache

void KVCacheQuant::validate() const {
  if (bits != 2 && bits != 4 && bits != 8 && bits != 16) {
    throw ConfigError("kv bits must be one of 2, 4, 8, 16 (got " + std::to_string(bits) + ")");
  }
  if (bits < 8 && group_size == 0) throw ConfigError("kv group size must be positive");
}

QuantSpec KVCacheQuant::spec() const {
  QuantSpec s;
  s.bits = bits;
  s.symmetric = false;
  s.dynamic = true;
  if (bits == 8) {
    s.granularity = Granularity::per_token;
  } else {
    s.granularity = Granularity::per_group;
    s.group_size = group_size;
  }
  return s;
}

Matrix KVCacheQuant::apply(const Matrix& kv) const {
  validate();
  if (bits == 16) return kv;
  return fake_quant(kv, spec());
}

// ---------------------------------------------------------------- decoder

std::vector<QuantizableLinear*> Block::linears() { return {&q, &k, &v, &o, &up, &gate, &down}; }
std::vector<const QuantizableLinear*> Block::linears() const { return {&q, &k, &v, &o, &up, &gate, &down}; }

std::vector<std::string> block_layer_ids(std::size_t b) {
  const std::string p = "blk" + std::to_string(b) + ".";
  return {p + "attn.q", p + "attn.k", p + "attn.v", p + "attn.o", p + "ffn.up", p + "ffn.gate", p + "ffn.down"};
}

TinyDecoder::TinyDecoder(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_model, f = cfg_.d_ffn;
  embedding_ = Matrix(cfg_.vocab, d);
  positions_ = Matrix(cfg_.max_seq, d);
  final_norm_.assign(d, 1.0f);
  blocks_.resize(cfg_.n_blocks);
  for (std::size_t b = 0; b < cfg_.n_blocks; ++b) {
    Block& blk = blocks_[b];
    blk.norm1.assign(d, 1.0f);
    blk.norm2.assign(d, 1.0f);
    const auto ids = block_layer_ids(b);
    blk.q = QuantizableLinear(ids[0], Matrix(d, d));
    blk.k = QuantizableLinear(ids[1], Matrix(d, d));
    blk.v = QuantizableLinear(ids[2], Matrix(d, d));
    blk.o = QuantizableLinear(ids[3], Matrix(d, d));
    blk.up = QuantizableLinear(ids[4], Matrix(f, d));
    blk.gate = QuantizableLinear(ids[5], Matrix(f, d));
    blk.down = QuantizableLinear(ids[6], Matrix(d, f));
  }
}

std::vector<QuantizableLinear*> TinyDecoder::linears() {
  std::vector<QuantizableLinear*> out;
  for (auto& b : blocks_)
    for (auto* l : b.linears()) out.push_back(l);
  return out;
}

std::vector<const QuantizableLinear*> TinyDecoder::linears() const {
  std::vector<const QuantizableLinear*> out;
  for (const auto& b : blocks_)
    for (const auto* l : b.linears()) out.push_back(l);
  return out;
}

QuantizableLinear& TinyDecoder::linear(const std::string& id) {
  for (auto* l : linears())
    if (l->id() == id) return *l;
  throw ConfigError("unknown layer '" + id + "'");
}

const QuantizableLinear& TinyDecoder::linear(const std::string& id) const {
  for (const auto* l : linears())
    if (l->id() == id) return *l;
  throw ConfigError("unknown layer '" + id + "'");
}

void TinyDecoder::restore_all() {
  for (auto* l : linears()) l->restore();
}

void rms_norm_rows(Matrix& x, std::span<const float> scale, double eps) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double ss = 0.0;
    for (float v : r) ss += static_cast<double>(v) * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(r.size()) + eps);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = static_cast<float>(r[j] * inv * scale[j]);
  }
}

namespace {

void check_stage(const Matrix& m, std::size_t block, const char* stage) {
  for (float v : m.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite activation in blk" + std::to_string(block) + "." + stage);
    }
  }
}

Matrix call(const QuantizableLinear& l, const Matrix& x, const LinearObserver& observer) {
  if (observer) observer(l.id(), x);
  return l.forward(x);
}

// Query row t sits at absolute position offset + t and sees keys 0..offset + t.
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t n_heads, std::size_t offset) {
  const std::size_t t_len = q.rows(), d = q.cols(), hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix out(t_len, d);
  std::vector<double> p(k.rows()), acc(hd);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t c0 = h * hd;
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t last = offset + t;
      double mx = -INFINITY;
      for (std::size_t u = 0; u <= last; ++u) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += static_cast<double>(q(t, c0 + c)) * k(u, c0 + c);
        p[u] = s * inv_sqrt;
        mx = std::max(mx, p[u]);
      }
      double z = 0.0;
      for (std::size_t u = 0; u <= last; ++u) {
        p[u] = std::exp(p[u] - mx);
        z += p[u];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t u = 0; u <= last; ++u) {
        const double w = p[u] / z;
        for (std::size_t c = 0; c < hd; ++c) acc[c] += w * v(u, c0 + c);
      }
      for (std::size_t c = 0; c < hd; ++c) out(t, c0 + c) = static_cast<float>(acc[c]);
    }
  }
  return out;
}

Matrix append_rows(const Matrix& cache, const Matrix& rows) {
  if (cache.empty()) return rows;
  const Matrix parts[] = {cache, rows};
  return vstack(parts);
}

}  // namespace

Matrix TinyDecoder::forward(std::span<const int> tokens, const KVCacheQuant& kv, const LinearObserver& observer) const {
  DecodeState state;
  return extend(state, tokens, kv, observer);
}

Matrix TinyDecoder::extend(DecodeState& state, std::span<const int> tokens, const KVCacheQuant& kv,
                           const LinearObserver& observer) const {
  kv.validate();
  const std::size_t t_len = tokens.size(), d = cfg_.d_model, offset = state.length;
  if (t_len == 0) throw ShapeError("forward needs at least one token");
  if (offset + t_len > cfg_.max_seq) {
    throw ShapeError("sequence length " + std::to_string(offset + t_len) + " exceeds max_seq " +
                     std::to_string(cfg_.max_seq));
  }
  if (state.k.empty()) {
    state.k.resize(blocks_.size());
    state.v.resize(blocks_.size());
  }
  Matrix h(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    const int id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) {
      throw ShapeError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    for (std::size_t c = 0; c < d; ++c) h(t, c) = embedding_(id, c) + positions_(offset + t, c);
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    Matrix a = h;
    rms_norm_rows(a, blk.norm1);
    const Matrix q = call(blk.q, a, observer);
    // Cache quantization is row-local, so stepping and full passes agree.
    state.k[b] = append_rows(state.k[b], kv.apply(call(blk.k, a, observer)));
    state.v[b] = append_rows(state.v[b], kv.apply(call(blk.v, a, observer)));
    const Matrix ctx = attention(q, state.k[b], state.v[b], cfg_.n_heads, offset);
    const Matrix o = call(blk.o, ctx, observer);
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += o.data()[i];
    check_stage(h, b, "attn");

    Matrix m = h;
    rms_norm_rows(m, blk.norm2);
    const Matrix up = call(blk.up, m, observer);
    const Matrix gate = call(blk.gate, m, observer);
    Matrix act(up.rows(), up.cols());
    for (std::size_t i = 0; i < act.size(); ++i) {
      const double g = gate.data()[i];
      act.data()[i] = static_cast<float>(g / (1.0 + std::exp(-g)) * up.data()[i]);
    }
    check_stage(act, b, "ffn.act");
    const Matrix down = call(blk.down, act, observer);
    for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += down.data()[i];
    check_stage(h, b, "ffn");
  }
  state.length += t_len;
  rms_norm_rows(h, final_norm_);
  Matrix logits = matmul_nt(h, embedding_);
  return logits;
}

TinyDecoder init_model(const ModelConfig& cfg) {
  TinyDecoder m(cfg);
  const Rng root(cfg.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  std::uint64_t stream = 0;
  auto fill = [&](Matrix& w) {
    Rng r = root.split(stream++);
    for (float& v : w.data()) v = static_cast<float>(r.normal() * scale);
  };
  fill(m.embedding());
  fill(m.positions());
  for (auto& blk : m.blocks()) {
    for (auto* l : blk.linears()) {
      Matrix w = l->weight();
      fill(w);
      l->set_weight(std::move(w));
    }
  }
  return m;
}

}  // namespace ptq
