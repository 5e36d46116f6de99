#include "ptq/quant.hpp"

#include <algorithm>
#include <cmath>

#include "ptq/error.hpp"

namespace ptq {

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::per_tensor:
      return "per_tensor";
    case Granularity::per_channel:
      return "per_channel";
    case Granularity::per_group:
      return "per_group";
    case Granularity::per_token:
      return "per_token";
  }
  return "?";
}

Granularity parse_granularity(const std::string& s) {
  if (s == "per_tensor" || s == "tensor") return Granularity::per_tensor;
  if (s == "per_channel" || s == "channel" || s == "ch") return Granularity::per_channel;
  if (s == "per_group" || s == "group") return Granularity::per_group;
  if (s == "per_token" || s == "token" || s == "tk") return Granularity::per_token;
  throw ConfigError("unknown granularity '" + s + "'");
}

bool supported_bits(int bits) { return bits == 2 || bits == 3 || bits == 4 || bits == 6 || bits == 8; }

void QuantSpec::validate() const {
  if (!supported_bits(bits)) throw ConfigError("unsupported bit-width " + std::to_string(bits));
  if (granularity == Granularity::per_group && group_size == 0) {
    throw ConfigError("per_group quantization needs a positive group size");
  }
  if (granularity == Granularity::per_token && !dynamic) {
    throw ConfigError("per_token quantization is dynamic by definition");
  }
}

GroupLayout make_layout(std::size_t rows, std::size_t cols, const QuantSpec& spec) {
  GroupLayout l;
  l.rows = rows;
  l.cols = cols;
  switch (spec.granularity) {
    case Granularity::per_tensor:
      l.whole_tensor = true;
      l.group_cols = cols;
      l.groups_per_row = 1;
      break;
    case Granularity::per_channel:
    case Granularity::per_token:
      l.group_cols = cols;
      l.groups_per_row = 1;
      break;
    case Granularity::per_group:
      if (spec.group_size == 0) throw ShapeError("group size must be positive");
      if (spec.group_size >= cols) {
        l.group_cols = cols;
        l.groups_per_row = 1;
      } else {
        if (cols % spec.group_size != 0) {
          throw ShapeError("group size " + std::to_string(spec.group_size) + " does not divide row length " +
                           std::to_string(cols));
        }
        l.group_cols = spec.group_size;
        l.groups_per_row = cols / spec.group_size;
      }
      break;
  }
  return l;
}

GroupParams fit_range(float lo, float hi, int bits, bool symmetric) {
  const int max_code = (1 << bits) - 1;
  GroupParams p;
  if (symmetric) {
    const float m = std::max(std::fabs(lo), std::fabs(hi));
    p.lower = -m;
    p.upper = m;
    p.zero_point = 1 << (bits - 1);
    p.delta = m > 0.0f ? (2.0 * m) / max_code : 1e-8;
    return p;
  }
  p.lower = std::min(lo, 0.0f);
  p.upper = std::max(hi, 0.0f);
  if (p.upper == p.lower) {
    p.delta = 1e-8;
    p.zero_point = 0;
    return p;
  }
  p.delta = (static_cast<double>(p.upper) - p.lower) / max_code;
  const double z = std::nearbyint(-static_cast<double>(p.lower) / p.delta);
  p.zero_point = static_cast<std::int32_t>(std::clamp(z, 0.0, static_cast<double>(max_code)));
  return p;
}

float fake_quant_value(float x, const GroupParams& p, int max_code) {
  return dequantize_value(quantize_value(x, p, max_code), p);
}

namespace {

void check_params(const Matrix& x, const QuantSpec& spec, const QuantParams& params) {
  const GroupLayout expected = make_layout(x.rows(), x.cols(), spec);
  if (!(expected == params.layout) || params.groups.size() != expected.num_groups()) {
    throw ConfigError("quantization params do not match " + to_string(spec.granularity) + " layout of a " +
                      std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " tensor");
  }
}

QuantParams resolve_params(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params,
                           bool require_dynamic) {
  spec.validate();
  if (params) {
    check_params(x, spec, *params);
    return *params;
  }
  if (require_dynamic && !spec.dynamic) {
    throw ConfigError("static quantization requires precomputed params");
  }
  return compute_qparams(x, spec);
}

}  // namespace

QuantParams compute_qparams(const Matrix& x, const QuantSpec& spec) {
  spec.validate();
  QuantParams qp;
  qp.layout = make_layout(x.rows(), x.cols(), spec);
  const std::size_t n = qp.layout.num_groups();
  std::vector<float> lo(n, 0.0f), hi(n, 0.0f);
  std::vector<char> seen(n, 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const std::size_t g = qp.layout.group_of(i, j);
      if (!seen[g]) {
        lo[g] = hi[g] = r[j];
        seen[g] = 1;
      } else {
        lo[g] = std::min(lo[g], r[j]);
        hi[g] = std::max(hi[g], r[j]);
      }
    }
  }
  qp.groups.resize(n);
  for (std::size_t g = 0; g < n; ++g) qp.groups[g] = fit_range(lo[g], hi[g], spec.bits, spec.symmetric);
  return qp;
}

QuantParams params_from_bounds(const GroupLayout& layout, const std::vector<float>& lower,
                               const std::vector<float>& upper, const QuantSpec& spec) {
  if (lower.size() != layout.num_groups() || upper.size() != layout.num_groups()) {
    throw ShapeError("bounds count does not match group count");
  }
  QuantParams qp;
  qp.layout = layout;
  qp.groups.resize(layout.num_groups());
  for (std::size_t g = 0; g < qp.groups.size(); ++g) qp.groups[g] = fit_range(lower[g], upper[g], spec.bits, spec.symmetric);
  return qp;
}

Matrix fake_quant(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params) {
  const QuantParams qp = resolve_params(x, spec, params, true);
  const int max_code = spec.max_code();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = fake_quant_value(src[j], qp.at(i, j), max_code);
  }
  return out;
}

QuantizedTensor quantize(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params) {
  QuantizedTensor q;
  q.params = resolve_params(x, spec, params, false);
  q.spec = spec;
  q.rows = x.rows();
  q.cols = x.cols();
  q.codes.resize(x.size());
  const int max_code = spec.max_code();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      q.codes[i * x.cols() + j] = static_cast<std::uint8_t>(quantize_value(src[j], q.params.at(i, j), max_code));
    }
  }
  return q;
}

Matrix dequantize(const QuantizedTensor& q) {
  Matrix out(q.rows, q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < q.cols; ++j) dst[j] = dequantize_value(q.codes[i * q.cols + j], q.params.at(i, j));
  }
  return out;
}

QuantError quant_error(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params) {
  const QuantParams qp = params ? *params : compute_qparams(x, spec);
  const Matrix xq = fake_quant(x, spec, qp);
  QuantError e;
  e.mse = mean_squared_diff(x, xq);
  e.max_abs = max_abs_diff(x, xq);
  return e;
}

QuantSpec default_weight_spec(int bits, bool weight_only) {
  QuantSpec s;
  s.bits = bits;
  s.symmetric = false;
  s.dynamic = false;
  if (weight_only) {
    s.granularity = Granularity::per_group;
    s.group_size = bits == 2 ? 64 : 128;
  } else {
    s.granularity = Granularity::per_channel;
  }
  return s;
}

QuantSpec default_activation_spec(int bits) {
  QuantSpec s;
  s.bits = bits;
  s.symmetric = false;
  s.granularity = Granularity::per_token;
  s.dynamic = true;
  return s;
}

std::string describe_bits(int w_bits, int a_bits, std::size_t group_size) {
  std::string s = "w" + std::to_string(w_bits) + "a" + std::to_string(a_bits);
  if (group_size > 0) s += "g" + std::to_string(group_size);
  return s;
}

}  // namespace ptq
