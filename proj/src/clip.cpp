#include "ptq/clip.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "ptq/error.hpp"
#include "ptq/objective.hpp"

namespace ptq {

std::string to_string(ClipKind k) {
  switch (k) {
    case ClipKind::CM:
      return "CM";
    case ClipKind::CS_sym:
      return "CS-sym";
    case ClipKind::CS_asym:
      return "CS-asym";
    case ClipKind::CL:
      return "CL";
  }
  return "?";
}

std::string to_string(ClipObjective o) { return o == ClipObjective::weight ? "weight" : "output"; }

ClipObjective parse_clip_objective(const std::string& s) {
  if (s == "weight") return ClipObjective::weight;
  if (s == "output") return ClipObjective::output;
  throw ConfigError("unknown clip objective '" + s + "' (expected weight|output)");
}

const std::vector<float>& shrink_ratios() {
  static const std::vector<float> ratios = [] {
    std::vector<float> r;
    for (int k = 100; k >= 50; --k) r.push_back(static_cast<float>(k) / 100.0f);
    return r;
  }();
  return ratios;
}

namespace {

struct GroupSpan {
  std::size_t row_begin, row_end, col_begin, col_end;
};

GroupSpan span_of(const GroupLayout& l, std::size_t g) {
  if (l.whole_tensor) return {0, l.rows, 0, l.cols};
  const std::size_t r = g / l.groups_per_row;
  const std::size_t c = (g % l.groups_per_row) * l.group_cols;
  return {r, r + 1, c, c + l.group_cols};
}

// Output objective with quantized layer inputs q(X): the quadratic form is
// (2/T) q(X)^T q(X) and `he` holds (2/T) q(X)^T r per weight row, where
// r = X w - q(X) w_hat is the row's output residual under the initial bounds.
struct OutputInit {
  std::vector<double> he;
  double total = 0.0;
};

// Incrementally maintained quantization error of a weight under per-group
// bounds. For the output objective it also keeps H e for every row so a
// change to one group costs O(rows_in_group * group_cols^2).
class BoundSearch {
 public:
  BoundSearch(const Matrix& w, const QuantSpec& spec, ClipObjective objective, const QuadraticForm* h,
              const GroupLayout& layout, const std::vector<float>& alpha, const std::vector<float>& beta,
              const OutputInit* init = nullptr)
      : w_(w), spec_(spec), objective_(objective), h_(h), layout_(layout), alpha_(alpha), beta_(beta),
        err_(w.size()), max_code_(spec.max_code()) {
    for (std::size_t g = 0; g < layout_.num_groups(); ++g) {
      const GroupParams p = fit_range(alpha_[g], beta_[g], spec_.bits, spec_.symmetric);
      const GroupSpan s = span_of(layout_, g);
      for (std::size_t r = s.row_begin; r < s.row_end; ++r)
        for (std::size_t c = s.col_begin; c < s.col_end; ++c)
          err_[r * w_.cols() + c] = static_cast<double>(w_(r, c)) - fake_quant_value(w_(r, c), p, max_code_);
    }
    if (objective_ == ClipObjective::weight) {
      for (double e : err_) total_ += e * e;
    } else if (init) {
      he_ = init->he;
      total_ = init->total;
    } else {
      he_.assign(w_.size(), 0.0);
      for (std::size_t r = 0; r < w_.rows(); ++r) {
        h_->apply(std::span<const double>(err_.data() + r * w_.cols(), w_.cols()),
                  std::span<double>(he_.data() + r * w_.cols(), w_.cols()));
      }
      for (std::size_t k = 0; k < err_.size(); ++k) total_ += err_[k] * he_[k];
    }
  }

  // Raw objective change if group g used bounds (lo, hi). Fills scratch_ with
  // the candidate's error deltas for accept().
  double delta(std::size_t g, float lo, float hi) {
    const GroupParams p = fit_range(lo, hi, spec_.bits, spec_.symmetric);
    const GroupSpan s = span_of(layout_, g);
    const std::size_t width = s.col_end - s.col_begin;
    const std::size_t n = w_.cols();
    scratch_.resize((s.row_end - s.row_begin) * width);
    double total = 0.0;
    for (std::size_t r = s.row_begin; r < s.row_end; ++r) {
      double* d = scratch_.data() + (r - s.row_begin) * width;
      const double* e = err_.data() + r * n + s.col_begin;
      bool any = false;
      for (std::size_t c = 0; c < width; ++c) {
        const float wv = w_(r, s.col_begin + c);
        const double e_new = static_cast<double>(wv) - fake_quant_value(wv, p, max_code_);
        d[c] = e_new - e[c];
        if (d[c] != 0.0) any = true;
        if (objective_ == ClipObjective::weight) total += e_new * e_new - e[c] * e[c];
      }
      if (objective_ == ClipObjective::output && any) {
        const double* he = he_.data() + r * n + s.col_begin;
        double lin = 0.0, quad = 0.0;
        for (std::size_t a = 0; a < width; ++a) {
          if (d[a] == 0.0) continue;
          lin += d[a] * he[a];
          const double* hr = h_->row(s.col_begin + a) + s.col_begin;
          double inner = 0.0;
          for (std::size_t b = 0; b < width; ++b) inner += hr[b] * d[b];
          quad += d[a] * inner;
        }
        total += quad + 2.0 * lin;
      }
    }
    return total;
  }

  void accept(std::size_t g, float lo, float hi) {
    total_ += delta(g, lo, hi);
    const GroupSpan s = span_of(layout_, g);
    const std::size_t width = s.col_end - s.col_begin;
    const std::size_t n = w_.cols();
    for (std::size_t r = s.row_begin; r < s.row_end; ++r) {
      const double* d = scratch_.data() + (r - s.row_begin) * width;
      for (std::size_t c = 0; c < width; ++c) err_[r * n + s.col_begin + c] += d[c];
      if (objective_ == ClipObjective::output) {
        double* he = he_.data() + r * n;
        for (std::size_t k = 0; k < n; ++k) {
          const double* hk = h_->row(k) + s.col_begin;
          double acc = 0.0;
          for (std::size_t c = 0; c < width; ++c) acc += hk[c] * d[c];
          he[k] += acc;
        }
      }
    }
    alpha_[g] = lo;
    beta_[g] = hi;
  }

  // Raw objective, tracked through accepted moves.
  double raw_total() const { return total_; }

  const std::vector<float>& alpha() const { return alpha_; }
  const std::vector<float>& beta() const { return beta_; }

 private:
  const Matrix& w_;
  QuantSpec spec_;
  ClipObjective objective_;
  const QuadraticForm* h_;
  GroupLayout layout_;
  std::vector<float> alpha_, beta_;
  std::vector<double> err_;
  std::vector<double> he_;
  std::vector<double> scratch_;
  int max_code_;
  double total_ = 0.0;
};

// Improvements smaller than this fraction of the current objective are
// treated as ties so accepted moves survive a fresh recomputation.
constexpr double kRelTol = 1e-12;

double tie_margin(double raw_total) { return kRelTol * std::max(std::fabs(raw_total), 1e-300); }

struct OutputSetup {
  QuadraticForm h;
  std::optional<OutputInit> init;
};

OutputSetup output_setup(const LayerRecord& record, ClipObjective objective, const InputQuantizer* aq,
                         const QuantSpec& spec, const std::vector<float>& alpha, const std::vector<float>& beta,
                         const GroupLayout& layout) {
  OutputSetup out;
  if (objective != ClipObjective::output) return out;
  if (record.activations.empty() && (aq || !record.hessian)) {
    throw StateError(record.layer_id + ": output clip objective needs calibration activations");
  }
  if (!aq) {
    out.h = QuadraticForm(hessian_of(record));
    return out;
  }
  LayerRecord qrec;
  qrec.layer_id = record.layer_id;
  qrec.weight = record.weight;
  for (const auto& x : record.activations) qrec.activations.push_back((*aq)(x));
  out.h = QuadraticForm(*accumulate_hessian(qrec).hessian);

  const Matrix w_hat = fake_quant(record.weight, spec, params_from_bounds(layout, alpha, beta, spec));
  const std::size_t rows = record.weight.rows(), n = record.weight.cols();
  const double scale = 2.0 / static_cast<double>(record.token_count());
  OutputInit init;
  init.he.assign(rows * n, 0.0);
  for (std::size_t b = 0; b < record.activations.size(); ++b) {
    const Matrix& x = record.activations[b];
    const Matrix& xq = qrec.activations[b];
    for (std::size_t t = 0; t < x.rows(); ++t) {
      for (std::size_t i = 0; i < rows; ++i) {
        double y = 0.0, yq = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          y += static_cast<double>(x(t, k)) * record.weight(i, k);
          yq += static_cast<double>(xq(t, k)) * w_hat(i, k);
        }
        const double r = y - yq;
        init.total += scale * r * r;
        double* he = init.he.data() + i * n;
        for (std::size_t k = 0; k < n; ++k) he[k] += scale * r * xq(t, k);
      }
    }
  }
  out.init = std::move(init);
  return out;
}

}  // namespace

std::vector<GroupStats> group_stats(const Matrix& w, const GroupLayout& layout) {
  std::vector<GroupStats> stats(layout.num_groups());
  std::vector<char> seen(stats.size(), 0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const std::size_t g = layout.group_of(i, j);
      const float v = w(i, j);
      auto& s = stats[g];
      if (!seen[g]) {
        s.min = s.max = v;
        seen[g] = 1;
      } else {
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
      }
      s.absmax = std::max(s.absmax, std::fabs(v));
    }
  }
  return stats;
}

float shrink_lower(const GroupStats& g, float ratio) { return g.min < 0.0f ? ratio * g.min : g.min; }
float shrink_upper(const GroupStats& g, float ratio) { return g.max > 0.0f ? ratio * g.max : g.max; }

ClipBounds bounds_from_ratios(const Matrix& w, const ClipBounds& source, const QuantSpec& spec) {
  if (!source.has_ratios()) throw StateError("clip bounds carry no shrink ratios");
  const GroupLayout layout = make_layout(w.rows(), w.cols(), spec);
  if (!(layout == source.layout)) throw ConfigError("clip ratios were computed for a different group layout");
  ClipBounds out = source;
  const auto stats = group_stats(w, layout);
  for (std::size_t g = 0; g < stats.size(); ++g) {
    if (source.strategy == ClipKind::CS_sym) {
      out.alpha[g] = -source.lo_ratio[g] * stats[g].absmax;
      out.beta[g] = source.hi_ratio[g] * stats[g].absmax;
    } else {
      out.alpha[g] = shrink_lower(stats[g], source.lo_ratio[g]);
      out.beta[g] = shrink_upper(stats[g], source.hi_ratio[g]);
    }
  }
  return out;
}

QuantParams to_params(const ClipBounds& bounds, const QuantSpec& spec) {
  return params_from_bounds(bounds.layout, bounds.alpha, bounds.beta, spec);
}

ClipBounds compute_bounds(const LayerRecord& record, ClipKind strategy, const QuantSpec& spec, ClipObjective objective,
                          const InputQuantizer* aq) {
  spec.validate();
  if (strategy == ClipKind::CL) throw ConfigError("CL bounds are learned; use learn_bounds");
  const Matrix& w = record.weight;
  ClipBounds b;
  b.layout = make_layout(w.rows(), w.cols(), spec);
  b.strategy = strategy;
  const std::size_t n = b.layout.num_groups();
  const auto stats = group_stats(w, b.layout);
  b.alpha.resize(n);
  b.beta.resize(n);
  b.lo_ratio.assign(n, 1.0f);
  b.hi_ratio.assign(n, 1.0f);
  for (std::size_t g = 0; g < n; ++g) {
    if (strategy == ClipKind::CS_sym) {
      b.alpha[g] = -stats[g].absmax;
      b.beta[g] = stats[g].absmax;
    } else {
      b.alpha[g] = stats[g].min;
      b.beta[g] = stats[g].max;
    }
  }
  if (strategy == ClipKind::CM) return b;

  const OutputSetup os = output_setup(record, objective, aq, spec, b.alpha, b.beta, b.layout);
  BoundSearch search(w, spec, objective, objective == ClipObjective::output ? &os.h : nullptr, b.layout, b.alpha,
                     b.beta, os.init ? &*os.init : nullptr);
  const auto& ratios = shrink_ratios();
  const std::vector<float> unit{1.0f};
  for (std::size_t g = 0; g < n; ++g) {
    const double margin = tie_margin(search.raw_total());
    double best = 0.0;
    float best_lo = 1.0f, best_hi = 1.0f;
    float best_a = b.alpha[g], best_b = b.beta[g];
    if (strategy == ClipKind::CS_sym) {
      if (stats[g].absmax == 0.0f) continue;
      for (float r : ratios) {
        const float c = r * stats[g].absmax;
        const double d = search.delta(g, -c, c);
        if (d < best - margin) {
          best = d;
          best_lo = best_hi = r;
          best_a = -c;
          best_b = c;
        }
      }
    } else {
      const auto& lo_grid = stats[g].min < 0.0f ? ratios : unit;
      const auto& hi_grid = stats[g].max > 0.0f ? ratios : unit;
      for (float rl : lo_grid) {
        const float lo = shrink_lower(stats[g], rl);
        for (float rh : hi_grid) {
          const float hi = shrink_upper(stats[g], rh);
          const double d = search.delta(g, lo, hi);
          if (d < best - margin) {
            best = d;
            best_lo = rl;
            best_hi = rh;
            best_a = lo;
            best_b = hi;
          }
        }
      }
    }
    if (best_lo != 1.0f || best_hi != 1.0f) search.accept(g, best_a, best_b);
    b.lo_ratio[g] = best_lo;
    b.hi_ratio[g] = best_hi;
  }
  b.alpha = search.alpha();
  b.beta = search.beta();
  return b;
}

ClipBounds learn_bounds(const LayerRecord& record, const ClipBounds& init, const QuantSpec& spec, std::size_t epochs,
                        double step, ClipObjective objective, const InputQuantizer* aq) {
  spec.validate();
  const Matrix& w = record.weight;
  const GroupLayout layout = make_layout(w.rows(), w.cols(), spec);
  if (!(layout == init.layout)) throw ConfigError("CL init bounds do not match the weight's group layout");
  ClipBounds out = init;
  out.strategy = ClipKind::CL;
  out.init = init.strategy == ClipKind::CS_asym ? ClipInit::CS_asym : ClipInit::minmax;
  out.lo_ratio.clear();
  out.hi_ratio.clear();
  if (epochs == 0 || step <= 0.0) return out;

  const auto stats = group_stats(w, layout);
  const OutputSetup os = output_setup(record, objective, aq, spec, init.alpha, init.beta, layout);
  BoundSearch search(w, spec, objective, objective == ClipObjective::output ? &os.h : nullptr, layout, init.alpha,
                     init.beta, os.init ? &*os.init : nullptr);
  std::vector<float> alpha = init.alpha, beta = init.beta;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    bool moved = false;
    for (std::size_t g = 0; g < layout.num_groups(); ++g) {
      const float span = stats[g].max - stats[g].min;
      if (span <= 0.0f) continue;
      const float d = static_cast<float>(step * span);
      const float moves[4][2] = {{-d, 0.0f}, {d, 0.0f}, {0.0f, -d}, {0.0f, d}};
      for (const auto& mv : moves) {
        const float lo = alpha[g] + mv[0];
        const float hi = beta[g] + mv[1];
        if (lo < stats[g].min || hi > stats[g].max || !(lo < hi)) continue;
        const double margin = tie_margin(search.raw_total());
        const double delta = search.delta(g, lo, hi);
        if (!std::isfinite(delta)) {
          throw NumericalError(record.layer_id + ": non-finite clip objective in group " + std::to_string(g));
        }
        if (delta < -margin) {
          search.accept(g, lo, hi);
          alpha[g] = lo;
          beta[g] = hi;
          moved = true;
        }
      }
    }
    if (!moved) break;
  }
  out.alpha = alpha;
  out.beta = beta;
  return out;
}

double clip_objective_value(const LayerRecord& record, const ClipBounds& bounds, const QuantSpec& spec,
                            ClipObjective objective, const InputQuantizer* aq) {
  const Matrix w_hat = fake_quant(record.weight, spec, to_params(bounds, spec));
  if (objective == ClipObjective::weight) return mean_squared_diff(record.weight, w_hat);
  if (aq) return quantized_layer_mse(record, w_hat, aq);
  return hessian_output_mse(record.weight, w_hat, QuadraticForm(hessian_of(record)));
}

std::vector<double> group_weight_errors(const Matrix& w, const ClipBounds& bounds, const QuantSpec& spec) {
  const QuantParams qp = to_params(bounds, spec);
  std::vector<double> out(bounds.layout.num_groups(), 0.0);
  const int max_code = spec.max_code();
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const std::size_t g = bounds.layout.group_of(i, j);
      const double e = static_cast<double>(w(i, j)) - fake_quant_value(w(i, j), qp.groups[g], max_code);
      out[g] += e * e;
    }
  }
  return out;
}

}  // namespace ptq
