#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ptq/layer_record.hpp"
#include "ptq/quant.hpp"

namespace ptq {

enum class MixMetric { hessian_diag, hessian_disturb, magnitude };
enum class MixGranularity { column, element };
enum class MixMode { static_plan, dynamic_plan };

std::string to_string(MixMetric m);
std::string to_string(MixGranularity g);
std::string to_string(MixMode m);
MixMetric parse_mix_metric(const std::string& s);
MixGranularity parse_mix_granularity(const std::string& s);
MixMode parse_mix_mode(const std::string& s);

// Which weights stay in full precision. Static column plans list the kept
// input columns; element plans list (row, col) pairs; dynamic plans only
// carry how many activation columns to keep per forward pass.
struct MixedPrecisionPlan {
  QuantSpec base_spec;
  MixMetric metric = MixMetric::hessian_disturb;
  MixGranularity granularity = MixGranularity::column;
  MixMode mode = MixMode::static_plan;
  double mixture_rate = 0.0;
  std::vector<std::size_t> keep_columns;  // sorted
  std::vector<std::pair<std::size_t, std::size_t>> keep_elements;  // sorted
  std::size_t dynamic_count = 0;
  std::map<std::string, int> layer_overrides;
};

// Column scores: hessian_diag -> H_jj; hessian_disturb -> H_jj * ||W_j - Q(W)_j||^2;
// magnitude -> max |X_j| over the calibration activations.
std::vector<double> score_columns(const LayerRecord& record, MixMetric metric, const QuantSpec& spec);

// Element scores (row-major, rows x cols): H_jj * (w_ij - q_ij)^2 for the
// Hessian metrics; magnitude uses max |X_j| broadcast over rows.
std::vector<double> score_elements(const LayerRecord& record, MixMetric metric, const QuantSpec& spec);

// Keeps the round(rate * n) highest-scoring entries, ties to the lower index.
// For element granularity `cols` gives the row width used to decode indices.
MixedPrecisionPlan build_plan(const std::vector<double>& scores, double mixture_rate, MixGranularity granularity,
                              MixMode mode, const QuantSpec& base_spec, std::size_t cols = 0);

// The `count` columns of x with the largest max |x|, ties to the lower index.
// Returned sorted ascending.
std::vector<std::size_t> select_outliers_dynamic(const Matrix& x, std::size_t count);

// Restores the kept columns / elements of w_hat from the full-precision w.
Matrix apply_plan(const Matrix& w_hat, const Matrix& w, const MixedPrecisionPlan& plan);

}  // namespace ptq
