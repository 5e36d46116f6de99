#pragma once

// Seeded layer fixtures shared by the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "ptq/layer_record.hpp"
#include "ptq/rng.hpp"
#include "ptq/tensor.hpp"

namespace fixtures {

inline ptq::Matrix gaussian(ptq::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  ptq::Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(rng.normal() * scale);
  return m;
}

struct LayerShape {
  std::size_t out = 16;
  std::size_t in = 32;
  std::size_t tokens = 32;  // per batch
  std::size_t batches = 2;
  std::size_t outliers = 2;  // input channels with inflated magnitude
  double outlier_gain = 8.0;
  double mixing = 0.3;  // correlation between neighbouring input channels
};

// Activations with a few loud channels and mild channel correlation, the
// shape that makes scaling and Hessian compensation matter.
inline ptq::LayerRecord layer(std::uint64_t seed, const LayerShape& s = {}) {
  ptq::Rng rng(seed);
  ptq::LayerRecord r;
  r.layer_id = "fixture." + std::to_string(seed);
  r.weight = gaussian(rng, s.out, s.in, 1.0 / std::sqrt(static_cast<double>(s.in)));
  std::vector<double> gain(s.in, 1.0);
  for (std::size_t k = 0; k < s.outliers && k < s.in; ++k) gain[rng.uniform_int(s.in)] = s.outlier_gain;
  for (std::size_t b = 0; b < s.batches; ++b) {
    ptq::Matrix z = gaussian(rng, s.tokens, s.in);
    ptq::Matrix x(s.tokens, s.in);
    for (std::size_t t = 0; t < s.tokens; ++t) {
      for (std::size_t j = 0; j < s.in; ++j) {
        const double prev = j > 0 ? z(t, j - 1) : 0.0;
        x(t, j) = static_cast<float>((z(t, j) + s.mixing * prev) * gain[j]);
      }
    }
    r.activations.push_back(std::move(x));
  }
  return ptq::accumulate_hessian(std::move(r));
}

}  // namespace fixtures
