#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ptq/clip.hpp"
#include "ptq/transform.hpp"

namespace ptq {

struct TransformStep {
  TransformKind kind = TransformKind::TS_v1;
  float gamma = 0.5f;               // TR, or TL initialized from TR
  ScaleInit init = ScaleInit::ones;  // TL only
  bool operator==(const TransformStep&) const = default;
};

struct ClipStep {
  ClipKind kind = ClipKind::CM;
  ClipInit init = ClipInit::minmax;  // CL only
  bool operator==(const ClipStep&) const = default;
};

// A composition of at most one transform, one clip and one reconstruction
// step, always executed in that order.
struct Recipe {
  std::optional<TransformStep> transform;
  std::optional<ClipStep> clip;
  bool reconstruct = false;

  bool empty() const { return !transform && !clip && !reconstruct; }
  // Canonical text, e.g. "TL(init=TS-v1)+CL(init=CS-asym)"; "" when empty.
  std::string render() const;
  // Accepts the canonical names plus "TL w/ TS-v1 init."-style aliases.
  // ConfigError on unknown steps, duplicates, wrong order, or RH after a
  // searched clip (CS-sym, CS-asym) unless `force`.
  static Recipe parse(const std::string& text, bool force = false);
  bool operator==(const Recipe&) const = default;
};

std::string render(const TransformStep& t);
std::string render(const ClipStep& c);

}  // namespace ptq
