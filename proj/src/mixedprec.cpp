#include "ptq/mixedprec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ptq/error.hpp"
#include "ptq/objective.hpp"

namespace ptq {

std::string to_string(MixMetric m) {
  switch (m) {
    case MixMetric::hessian_diag:
      return "hessian_diag";
    case MixMetric::hessian_disturb:
      return "hessian_disturb";
    case MixMetric::magnitude:
      return "magnitude";
  }
  return "?";
}

std::string to_string(MixGranularity g) { return g == MixGranularity::column ? "column" : "element"; }
std::string to_string(MixMode m) { return m == MixMode::static_plan ? "static" : "dynamic"; }

MixMetric parse_mix_metric(const std::string& s) {
  if (s == "hessian_diag") return MixMetric::hessian_diag;
  if (s == "hessian_disturb") return MixMetric::hessian_disturb;
  if (s == "magnitude") return MixMetric::magnitude;
  throw ConfigError("unknown mix.metric '" + s + "'");
}

MixGranularity parse_mix_granularity(const std::string& s) {
  if (s == "column") return MixGranularity::column;
  if (s == "element") return MixGranularity::element;
  throw ConfigError("unknown mix.granularity '" + s + "'");
}

MixMode parse_mix_mode(const std::string& s) {
  if (s == "static") return MixMode::static_plan;
  if (s == "dynamic") return MixMode::dynamic_plan;
  throw ConfigError("unknown mix.mode '" + s + "'");
}

namespace {

const Matrix& require_hessian(const LayerRecord& record) {
  if (!record.hessian) throw StateError(record.layer_id + ": Hessian metrics need an accumulated Hessian");
  return *record.hessian;
}

std::vector<double> activation_magnitude(const LayerRecord& record) {
  if (record.activations.empty()) throw StateError(record.layer_id + ": magnitude metric needs activations");
  std::vector<double> m(record.weight.cols(), 0.0);
  for (const auto& x : record.activations) {
    const auto a = absmax(x, Axis::col);
    for (std::size_t j = 0; j < m.size(); ++j) m[j] = std::max(m[j], static_cast<double>(a[j]));
  }
  return m;
}

Matrix quantized_weight(const LayerRecord& record, const QuantSpec& spec) {
  return fake_quant(record.weight, spec, compute_qparams(record.weight, spec));
}

std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<double> score_columns(const LayerRecord& record, MixMetric metric, const QuantSpec& spec) {
  const std::size_t n = record.weight.cols();
  std::vector<double> scores(n, 0.0);
  switch (metric) {
    case MixMetric::magnitude:
      return activation_magnitude(record);
    case MixMetric::hessian_diag: {
      const Matrix& h = require_hessian(record);
      for (std::size_t j = 0; j < n; ++j) scores[j] = h(j, j);
      return scores;
    }
    case MixMetric::hessian_disturb: {
      const Matrix& h = require_hessian(record);
      const Matrix q = quantized_weight(record, spec);
      for (std::size_t i = 0; i < record.weight.rows(); ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double e = static_cast<double>(record.weight(i, j)) - q(i, j);
          scores[j] += e * e;
        }
      }
      for (std::size_t j = 0; j < n; ++j) scores[j] *= h(j, j);
      return scores;
    }
  }
  return scores;
}

std::vector<double> score_elements(const LayerRecord& record, MixMetric metric, const QuantSpec& spec) {
  const std::size_t rows = record.weight.rows(), n = record.weight.cols();
  std::vector<double> scores(rows * n, 0.0);
  if (metric == MixMetric::magnitude) {
    const auto m = activation_magnitude(record);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < n; ++j) scores[i * n + j] = m[j];
    return scores;
  }
  const Matrix& h = require_hessian(record);
  const Matrix q = quantized_weight(record, spec);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double e = static_cast<double>(record.weight(i, j)) - q(i, j);
      scores[i * n + j] = metric == MixMetric::hessian_diag ? static_cast<double>(h(j, j)) : h(j, j) * e * e;
    }
  }
  return scores;
}

MixedPrecisionPlan build_plan(const std::vector<double>& scores, double mixture_rate, MixGranularity granularity,
                              MixMode mode, const QuantSpec& base_spec, std::size_t cols) {
  if (!(mixture_rate >= 0.0 && mixture_rate <= 1.0)) throw ConfigError("mixture rate must lie in [0, 1]");
  MixedPrecisionPlan plan;
  plan.base_spec = base_spec;
  plan.granularity = granularity;
  plan.mode = mode;
  plan.mixture_rate = mixture_rate;
  const auto k = static_cast<std::size_t>(std::llround(mixture_rate * static_cast<double>(scores.size())));
  if (mode == MixMode::dynamic_plan) {
    plan.dynamic_count = k;
    return plan;
  }
  const auto kept = top_k(scores, k);
  if (granularity == MixGranularity::column) {
    plan.keep_columns = kept;
  } else {
    if (cols == 0) throw ConfigError("element plans need the row width");
    for (std::size_t idx : kept) plan.keep_elements.emplace_back(idx / cols, idx % cols);
  }
  return plan;
}

std::vector<std::size_t> select_outliers_dynamic(const Matrix& x, std::size_t count) {
  if (count > x.cols()) throw ConfigError("outlier count exceeds column count");
  if (count == 0) return {};
  const auto m = absmax(x, Axis::col);
  return top_k(std::vector<double>(m.begin(), m.end()), count);
}

Matrix apply_plan(const Matrix& w_hat, const Matrix& w, const MixedPrecisionPlan& plan) {
  if (w_hat.rows() != w.rows() || w_hat.cols() != w.cols()) throw ShapeError("apply_plan: shape mismatch");
  Matrix out = w_hat;
  for (std::size_t j : plan.keep_columns) {
    if (j >= w.cols()) throw ShapeError("apply_plan: kept column out of range");
    for (std::size_t i = 0; i < w.rows(); ++i) out(i, j) = w(i, j);
  }
  for (const auto& [i, j] : plan.keep_elements) {
    if (i >= w.rows() || j >= w.cols()) throw ShapeError("apply_plan: kept element out of range");
    out(i, j) = w(i, j);
  }
  return out;
}

}  // namespace ptq
