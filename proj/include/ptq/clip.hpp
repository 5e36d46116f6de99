#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ptq/layer_record.hpp"
#include "ptq/objective.hpp"
#include "ptq/quant.hpp"

namespace ptq {

enum class ClipKind { CM, CS_sym, CS_asym, CL };
enum class ClipInit { minmax, CS_asym };
// weight: per-group weight reconstruction MSE.
// output: layer-output MSE on the record's calibration activations.
enum class ClipObjective { weight, output };

std::string to_string(ClipKind k);
std::string to_string(ClipObjective o);
ClipObjective parse_clip_objective(const std::string& s);

// Per-group clipping range [alpha, beta] for a weight under a given layout.
// Searched strategies also keep the shrink ratios that produced each bound so
// the same clipping can be re-applied after the weight is rescaled.
struct ClipBounds {
  GroupLayout layout;
  std::vector<float> alpha;
  std::vector<float> beta;
  std::vector<float> lo_ratio;  // empty for learned bounds
  std::vector<float> hi_ratio;
  ClipKind strategy = ClipKind::CM;
  ClipInit init = ClipInit::minmax;

  bool has_ratios() const { return !lo_ratio.empty(); }
};

// Shrink ratios {1.00, 0.99, ..., 0.50}; 1.00 first.
const std::vector<float>& shrink_ratios();

// Per-group min, max and max|w|.
struct GroupStats {
  float min = 0.0f;
  float max = 0.0f;
  float absmax = 0.0f;
};
std::vector<GroupStats> group_stats(const Matrix& w, const GroupLayout& layout);

// Bounds from shrink ratios: CS-sym uses +-r * max|w|; the others move the
// negative minimum and the positive maximum toward zero (a bound on the
// far side of zero stays at the data extreme).
float shrink_lower(const GroupStats& g, float ratio);
float shrink_upper(const GroupStats& g, float ratio);

// Re-derives absolute bounds for `w` from the ratios stored in `source`.
ClipBounds bounds_from_ratios(const Matrix& w, const ClipBounds& source, const QuantSpec& spec);

QuantParams to_params(const ClipBounds& bounds, const QuantSpec& spec);

// CM: exact group min/max. CS-sym: 51-point grid over c = r * max|w|.
// CS-asym: independent 51 x 51 grid over lower/upper shrink ratios.
// With an input quantizer the output objective measures the layer with its
// inputs quantized as deployed.
ClipBounds compute_bounds(const LayerRecord& record, ClipKind strategy, const QuantSpec& spec,
                          ClipObjective objective = ClipObjective::weight, const InputQuantizer* aq = nullptr);

// Coordinate descent on (alpha, beta) per group with steps of
// step * (group max - group min); accepts only improving moves and never
// leaves [group min, group max].
ClipBounds learn_bounds(const LayerRecord& record, const ClipBounds& init, const QuantSpec& spec, std::size_t epochs,
                        double step, ClipObjective objective = ClipObjective::weight,
                        const InputQuantizer* aq = nullptr);

// Objective of quantizing the record's weight with the given bounds. The
// weight objective is the mean squared weight error; the output objective is
// the layer-output MSE.
double clip_objective_value(const LayerRecord& record, const ClipBounds& bounds, const QuantSpec& spec,
                            ClipObjective objective, const InputQuantizer* aq = nullptr);

// Sum of squared weight errors of each group (weight objective, unnormalized).
std::vector<double> group_weight_errors(const Matrix& w, const ClipBounds& bounds, const QuantSpec& spec);

}  // namespace ptq
