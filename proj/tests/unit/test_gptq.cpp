#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "ptq/error.hpp"
#include "ptq/gptq.hpp"

using namespace ptq;

namespace {

QuantSpec wspec(int bits, Granularity g = Granularity::per_channel, std::size_t group = 0) {
  QuantSpec s;
  s.bits = bits;
  s.granularity = g;
  s.group_size = group;
  return s;
}

LayerRecord record_with(const Matrix& w, const Matrix& x) {
  LayerRecord r;
  r.layer_id = "l";
  r.weight = w;
  r.activations = {x};
  return accumulate_hessian(r);
}

double direct_error(const Matrix& x, const Matrix& w, const Matrix& w_hat) {
  double s = 0;
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double d = 0;
      for (std::size_t k = 0; k < w.cols(); ++k) d += static_cast<double>(x(t, k)) * (w(i, k) - w_hat(i, k));
      s += d * d;
    }
  return s;
}

}  // namespace

TEST_CASE("isotropic Hessian reduces to plain rounding") {
  Rng rng(1);
  const Matrix w = fixtures::gaussian(rng, 6, 12);
  Matrix x = Matrix::identity(12);
  for (float& v : x.data()) v *= 3.0f;
  for (const QuantSpec& spec : {wspec(3), wspec(2, Granularity::per_group, 4)}) {
    ReconstructionConfig cfg;
    cfg.spec = spec;
    const auto res = reconstruct(record_with(w, x), cfg);
    CHECK(res.w_hat == fake_quant(w, spec, compute_qparams(w, spec)));
  }
}

TEST_CASE("an exactly representable column leaves the next one alone") {
  const Matrix w{{1.0f, 1.0f}};
  const Matrix x{{1.0f, 0.9f}, {0.8f, 1.0f}, {-0.5f, -0.4f}};
  ReconstructionConfig cfg;
  cfg.spec = wspec(8);
  const auto res = reconstruct(record_with(w, x), cfg);
  const QuantParams p = compute_qparams(w, cfg.spec);
  CHECK(res.w_hat(0, 0) == fake_quant_value(1.0f, p.groups[0], 255));
  CHECK(res.w_hat(0, 0) == 1.0f);
  CHECK(res.w_hat(0, 1) == 1.0f);
}

TEST_CASE("1x3 two-bit weight: at most naive error, at least the enumeration optimum") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Matrix w = fixtures::gaussian(rng, 1, 3, 1.0);
    Matrix x = fixtures::gaussian(rng, 32, 3, 1.0);
    for (std::size_t t = 0; t < 32; ++t) {
      x(t, 1) = 0.9f * x(t, 0) + 0.3f * x(t, 1);
      x(t, 2) = 0.8f * x(t, 1) + 0.4f * x(t, 2);
    }
    ReconstructionConfig cfg;
    cfg.spec = wspec(2);
    const LayerRecord r = record_with(w, x);
    const auto res = reconstruct(r, cfg);
    const QuantParams p = compute_qparams(w, cfg.spec);
    const double naive = direct_error(x, w, fake_quant(w, cfg.spec, p));
    double best = INFINITY;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 4; ++c) {
          Matrix q{{dequantize_value(a, p.groups[0]), dequantize_value(b, p.groups[0]), dequantize_value(c, p.groups[0])}};
          best = std::min(best, direct_error(x, w, q));
        }
    CHECK(res.calib_error == doctest::Approx(direct_error(x, w, res.w_hat)).epsilon(1e-5));
    CHECK(res.calib_error <= naive * (1 + 1e-6));
    CHECK(res.calib_error >= best * (1 - 1e-6));
  }
}

TEST_CASE("column order does not matter when H is diagonal") {
  Rng rng(7);
  const std::size_t n = 10;
  const Matrix w = fixtures::gaussian(rng, 4, n);
  // one token per column: X^T X is diagonal with distinct entries
  Matrix x(n, n);
  for (std::size_t j = 0; j < n; ++j) x(j, j) = 0.5f + static_cast<float>(j);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[2], perm[7]);
  Matrix wp(4, n), xp(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < 4; ++i) wp(i, j) = w(i, perm[j]);
    for (std::size_t t = 0; t < n; ++t) xp(t, j) = x(t, perm[j]);
  }
  ReconstructionConfig cfg;
  cfg.spec = wspec(3);
  const auto a = reconstruct(record_with(w, x), cfg);
  const auto b = reconstruct(record_with(wp, xp), cfg);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < 4; ++i) CHECK(b.w_hat(i, j) == a.w_hat(i, perm[j]));
}

TEST_CASE("codes stay inside supplied clip bounds") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const LayerRecord r = fixtures::layer(seed);
    const QuantSpec spec = wspec(3, Granularity::per_group, 16);
    const ClipBounds b = compute_bounds(r, ClipKind::CS_asym, spec);
    ReconstructionConfig cfg;
    cfg.spec = spec;
    const auto res = reconstruct(r, cfg, &b);
    const QuantParams p = to_params(b, spec);
    for (std::size_t i = 0; i < r.weight.rows(); ++i)
      for (std::size_t j = 0; j < r.weight.cols(); ++j) {
        const std::size_t g = b.layout.group_of(i, j);
        const double slack = p.groups[g].delta / 2 * (1 + 1e-6);
        CHECK(res.w_hat(i, j) >= std::min(b.alpha[g], 0.0f) - slack);
        CHECK(res.w_hat(i, j) <= std::max(b.beta[g], 0.0f) + slack);
        CHECK(res.codes.codes[i * r.weight.cols() + j] <= spec.max_code());
      }
    CHECK(dequantize(res.codes) == res.w_hat);
  }
}

TEST_CASE("reconstruction errors") {
  LayerRecord r;
  r.weight = Matrix(1, 2);
  ReconstructionConfig cfg;
  cfg.spec = wspec(4);
  CHECK_THROWS_AS(reconstruct(r, cfg), StateError);
  r.hessian = Matrix{{1.0f, 0.0f}, {0.0f, -5.0f}};
  CHECK_THROWS_AS(reconstruct(r, cfg), NumericalError);
  r.hessian = Matrix::identity(2);
  cfg.damp_ratio = 0.0;
  CHECK_THROWS_AS(reconstruct(r, cfg), ConfigError);
}

TEST_CASE("reconstruction is deterministic") {
  const LayerRecord r = fixtures::layer(9);
  ReconstructionConfig cfg;
  cfg.spec = wspec(2, Granularity::per_group, 8);
  const auto a = reconstruct(r, cfg), b = reconstruct(r, cfg);
  CHECK(a.w_hat == b.w_hat);
  CHECK(a.codes.codes == b.codes.codes);
}
