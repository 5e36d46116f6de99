#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ptq/clip.hpp"
#include "ptq/layer_record.hpp"
#include "ptq/quant.hpp"

namespace ptq {

enum class TransformKind { TR, TS_v1, TS_v2, TL };
enum class ScaleInit { ones, TR, TS_v1 };

std::string to_string(TransformKind k);

// Per-input-channel balance vector s: the layer computes (W s)(s^-1 X).
struct TransformScale {
  std::vector<float> s;
  TransformKind strategy = TransformKind::TR;
  std::optional<float> gamma;  // absent when the identity candidate won a search
  ScaleInit init = ScaleInit::ones;
};

struct ScaleStrategy {
  TransformKind kind = TransformKind::TS_v1;
  float gamma = 0.5f;  // TR only
};

// Number of uniform gamma points searched by TS-v1 over [0, 1].
inline constexpr std::size_t kGammaGridPoints = 21;

// s_j = max|X_j|^gamma / max|W_j|^(1-gamma); channels where either maximum
// is zero keep s_j = 1.
std::vector<float> power_scale(const std::vector<float>& x_absmax, const std::vector<float>& w_absmax, float gamma);

// Layer-output MSE between the full-precision layer and the layer quantized
// after scaling by s (weights through spec_w, optionally clipped with the
// shrink ratios of `clip`; inputs through spec_a when given).
class ScaleObjective {
 public:
  ScaleObjective(const LayerRecord& record, const QuantSpec& spec_w, std::optional<QuantSpec> spec_a,
                 const ClipBounds* clip = nullptr);
  double operator()(const std::vector<float>& s) const;

 private:
  const LayerRecord& record_;
  QuantSpec spec_w_;
  std::optional<QuantSpec> spec_a_;
  const ClipBounds* clip_;
  std::vector<Matrix> y_ref_;  // per batch x W^T (activation-quantized objective only)
  std::vector<double> h_;
};

// TR: closed form at fixed gamma. TS-v1: grid over kGammaGridPoints gammas
// plus s = ones, minimizing ScaleObjective. TS-v2: s_j = max(1, max|X_j|).
TransformScale compute_scale(const LayerRecord& record, const ScaleStrategy& strategy, const QuantSpec& spec_w,
                             const std::optional<QuantSpec>& spec_a = std::nullopt);

// Coordinate descent on log s: per channel try s_j * (1 + step) and
// s_j / (1 + step), keeping a move only when the objective drops. `clip`, when
// given, is re-applied through its shrink ratios for every candidate.
TransformScale learn_scale(const LayerRecord& record, const TransformScale& init, const QuantSpec& spec_w,
                           const std::optional<QuantSpec>& spec_a, std::size_t epochs, double step,
                           const ClipBounds* clip = nullptr);

// W' = W diag(s), X' = X diag(s)^-1, H' = diag(s)^-1 H diag(s)^-1.
// ConfigError if any s_j <= 0 or the length mismatches.
LayerRecord apply_transform(const LayerRecord& record, const std::vector<float>& s);
inline LayerRecord apply_transform(const LayerRecord& record, const TransformScale& s) {
  return apply_transform(record, s.s);
}

}  // namespace ptq
