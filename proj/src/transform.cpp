#include "ptq/transform.hpp"

#include <cmath>
#include <limits>

#include "ptq/error.hpp"
#include "ptq/objective.hpp"

namespace ptq {

std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::TR:
      return "TR";
    case TransformKind::TS_v1:
      return "TS-v1";
    case TransformKind::TS_v2:
      return "TS-v2";
    case TransformKind::TL:
      return "TL";
  }
  return "?";
}

std::vector<float> power_scale(const std::vector<float>& x_absmax, const std::vector<float>& w_absmax, float gamma) {
  std::vector<float> s(x_absmax.size(), 1.0f);
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (x_absmax[j] <= 0.0f || w_absmax[j] <= 0.0f) continue;
    const double v = std::pow(static_cast<double>(x_absmax[j]), gamma) /
                     std::pow(static_cast<double>(w_absmax[j]), 1.0 - gamma);
    const float f = static_cast<float>(v);
    if (std::isfinite(f) && f > 0.0f) s[j] = f;
  }
  return s;
}

namespace {

std::vector<float> activation_absmax(const LayerRecord& record) {
  if (record.activations.empty()) throw StateError(record.layer_id + ": transform needs calibration activations");
  std::vector<float> m(record.weight.cols(), 0.0f);
  for (const auto& x : record.activations) {
    const auto a = absmax(x, Axis::col);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] = std::max(m[j], a[j]);
  }
  return m;
}

Matrix scale_columns(const Matrix& w, const std::vector<float>& s) {
  Matrix out = w;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= s[j];
  }
  return out;
}

}  // namespace

ScaleObjective::ScaleObjective(const LayerRecord& record, const QuantSpec& spec_w, std::optional<QuantSpec> spec_a,
                               const ClipBounds* clip)
    : record_(record), spec_w_(spec_w), spec_a_(std::move(spec_a)), clip_(clip) {
  record.validate();
  if (record.activations.empty()) throw StateError(record.layer_id + ": transform needs calibration activations");
  if (spec_a_) {
    for (const auto& x : record.activations) y_ref_.push_back(matmul_nt(x, record.weight));
  } else {
    const Matrix h = hessian_of(record);
    h_.assign(h.data().begin(), h.data().end());
  }
}

double ScaleObjective::operator()(const std::vector<float>& s) const {
  const Matrix& w = record_.weight;
  const Matrix ws = scale_columns(w, s);
  const QuantParams qp = clip_ ? to_params(bounds_from_ratios(ws, *clip_, spec_w_), spec_w_) : compute_qparams(ws, spec_w_);
  const Matrix w_hat = fake_quant(ws, spec_w_, qp);
  if (spec_a_) {
    std::vector<Matrix> xs;
    xs.reserve(record_.activations.size());
    for (const auto& x : record_.activations) {
      Matrix m = x;
      for (std::size_t t = 0; t < m.rows(); ++t) {
        auto r = m.row(t);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] /= s[j];
      }
      xs.push_back(std::move(m));
    }
    const InputQuantizer aq(*spec_a_, xs);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < xs.size(); ++b) {
      sum += mean_squared_diff(y_ref_[b], matmul_nt(aq(xs[b]), w_hat)) * static_cast<double>(y_ref_[b].size());
      count += y_ref_[b].size();
    }
    return sum / static_cast<double>(count);
  }
  // Error in the original basis: u = (W s - Q(W s)) / s, objective sum u H u / (2 rows).
  const std::size_t n = w.cols();
  std::vector<double> u(n);
  double total = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const auto a = ws.row(i);
    const auto b = w_hat.row(i);
    for (std::size_t j = 0; j < n; ++j) u[j] = (static_cast<double>(a[j]) - b[j]) / s[j];
    for (std::size_t j = 0; j < n; ++j) {
      if (u[j] == 0.0) continue;
      const double* hr = h_.data() + j * n;
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += hr[k] * u[k];
      total += u[j] * acc;
    }
  }
  return total / (2.0 * static_cast<double>(w.rows()));
}

TransformScale compute_scale(const LayerRecord& record, const ScaleStrategy& strategy, const QuantSpec& spec_w,
                             const std::optional<QuantSpec>& spec_a) {
  const auto x_max = activation_absmax(record);
  TransformScale out;
  out.strategy = strategy.kind;
  switch (strategy.kind) {
    case TransformKind::TR: {
      out.gamma = strategy.gamma;
      out.s = power_scale(x_max, absmax(record.weight, Axis::col), strategy.gamma);
      return out;
    }
    case TransformKind::TS_v2: {
      out.s.resize(x_max.size());
      for (std::size_t j = 0; j < x_max.size(); ++j) out.s[j] = x_max[j] > 0.0f ? std::max(1.0f, x_max[j]) : 1.0f;
      return out;
    }
    case TransformKind::TS_v1: {
      const auto w_max = absmax(record.weight, Axis::col);
      const ScaleObjective objective(record, spec_w, spec_a);
      std::vector<float> best(x_max.size(), 1.0f);
      double best_value = objective(best);
      std::optional<float> best_gamma;
      for (std::size_t k = 0; k < kGammaGridPoints; ++k) {
        const float gamma = static_cast<float>(k) / static_cast<float>(kGammaGridPoints - 1);
        auto s = power_scale(x_max, w_max, gamma);
        const double v = objective(s);
        if (v < best_value) {
          best_value = v;
          best = std::move(s);
          best_gamma = gamma;
        }
      }
      out.s = std::move(best);
      out.gamma = best_gamma;
      return out;
    }
    case TransformKind::TL:
      break;
  }
  throw ConfigError("TL scales are learned; use learn_scale");
}

TransformScale learn_scale(const LayerRecord& record, const TransformScale& init, const QuantSpec& spec_w,
                           const std::optional<QuantSpec>& spec_a, std::size_t epochs, double step,
                           const ClipBounds* clip) {
  if (init.s.size() != record.weight.cols()) throw ConfigError(record.layer_id + ": TL init has the wrong length");
  TransformScale out = init;
  out.strategy = TransformKind::TL;
  switch (init.strategy) {
    case TransformKind::TR:
      out.init = ScaleInit::TR;
      break;
    case TransformKind::TS_v1:
      out.init = ScaleInit::TS_v1;
      break;
    default:
      out.init = init.init;
      break;
  }
  if (epochs == 0 || step == 0.0) return out;
  if (step < 0.0) throw ConfigError("TL step must be non-negative");

  const ScaleObjective objective(record, spec_w, spec_a, clip);
  std::vector<float> s = init.s;
  double best = objective(s);
  if (!std::isfinite(best)) throw NumericalError(record.layer_id + ": non-finite TL objective at init");
  const double up = 1.0 + step;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    bool moved = false;
    for (std::size_t j = 0; j < s.size(); ++j) {
      for (const double factor : {up, 1.0 / up}) {
        const float old = s[j];
        s[j] = static_cast<float>(old * factor);
        const double v = objective(s);
        if (!std::isfinite(v)) {
          throw NumericalError(record.layer_id + ": non-finite TL objective at channel " + std::to_string(j));
        }
        if (v < best) {
          best = v;
          moved = true;
          break;
        }
        s[j] = old;
      }
    }
    if (!moved) break;
  }
  out.s = std::move(s);
  return out;
}

LayerRecord apply_transform(const LayerRecord& record, const std::vector<float>& s) {
  const std::size_t n = record.weight.cols();
  if (s.size() != n) throw ConfigError(record.layer_id + ": scale length does not match weight input width");
  for (std::size_t j = 0; j < n; ++j) {
    if (!(s[j] > 0.0f) || !std::isfinite(s[j])) {
      throw ConfigError(record.layer_id + ": scale entry " + std::to_string(j) + " is not positive");
    }
  }
  LayerRecord out;
  out.layer_id = record.layer_id;
  out.weight = scale_columns(record.weight, s);
  out.activations.reserve(record.activations.size());
  for (const auto& x : record.activations) {
    Matrix xs = x;
    for (std::size_t t = 0; t < xs.rows(); ++t) {
      auto r = xs.row(t);
      for (std::size_t j = 0; j < n; ++j) r[j] /= s[j];
    }
    out.activations.push_back(std::move(xs));
  }
  if (record.hessian) {
    Matrix h = *record.hessian;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) h(i, j) = static_cast<float>(static_cast<double>(h(i, j)) / (static_cast<double>(s[i]) * s[j]));
    out.hessian = std::move(h);
  }
  return out;
}

}  // namespace ptq
