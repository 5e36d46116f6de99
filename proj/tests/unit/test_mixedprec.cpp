#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "ptq/error.hpp"
#include "ptq/mixedprec.hpp"
#include "ptq/objective.hpp"

using namespace ptq;

namespace {

QuantSpec wspec(int bits) {
  QuantSpec s;
  s.bits = bits;
  s.granularity = Granularity::per_channel;
  return s;
}

double output_mse(const LayerRecord& r, const Matrix& w_hat) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& x : r.activations) {
    const Matrix a = matmul_nt(x, r.weight), b = matmul_nt(x, w_hat);
    s += mean_squared_diff(a, b) * static_cast<double>(a.size());
    n += a.size();
  }
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("exact quantization gives zero disturbance") {
  LayerRecord r;
  r.weight = Matrix{{-1.0f, 0.0f, 1.0f, 2.0f}};
  r.hessian = Matrix::identity(4);
  for (double s : score_columns(r, MixMetric::hessian_disturb, wspec(2))) CHECK(s == 0.0);
  for (double s : score_elements(r, MixMetric::hessian_disturb, wspec(2))) CHECK(s == 0.0);
}

TEST_CASE("Hessian diagonal ranking ignores the weight") {
  LayerRecord r;
  r.weight = Matrix{{100.0f, 0.001f}};
  r.hessian = Matrix{{1.0f, 0.0f}, {0.0f, 9.0f}};
  const auto s = score_columns(r, MixMetric::hessian_diag, wspec(4));
  CHECK(s == std::vector<double>{1.0, 9.0});
  const auto plan = build_plan(s, 0.5, MixGranularity::column, MixMode::static_plan, wspec(4));
  CHECK(plan.keep_columns == std::vector<std::size_t>{1});
  LayerRecord none;
  none.weight = Matrix(1, 2);
  CHECK_THROWS_AS(score_columns(none, MixMetric::hessian_diag, wspec(4)), StateError);
}

TEST_CASE("disturb ranking follows leave-one-column output error") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    fixtures::LayerShape shape;
    shape.out = 6;
    shape.in = 8;
    shape.tokens = 48;
    const LayerRecord r = fixtures::layer(seed, shape);
    const QuantSpec spec = wspec(2);
    const Matrix q = fake_quant(r.weight, spec, compute_qparams(r.weight, spec));
    std::vector<double> brute(8);
    for (std::size_t j = 0; j < 8; ++j) {
      Matrix one = r.weight;
      for (std::size_t i = 0; i < 6; ++i) one(i, j) = q(i, j);
      brute[j] = output_mse(r, one);
    }
    const auto scores = score_columns(r, MixMetric::hessian_disturb, spec);
    auto rank = [](const std::vector<double>& v) {
      std::vector<std::size_t> idx(v.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
      return idx;
    };
    const auto a = rank(scores), b = rank(brute);
    int agree = 0;
    for (std::size_t k = 0; k < 8; ++k) agree += a[k] == b[k];
    CHECK(agree >= 6);
  }
}

TEST_CASE("plan sizes and tie rule") {
  const std::vector<double> s{3, 1, 4, 1};
  CHECK(build_plan(s, 0.0, MixGranularity::column, MixMode::static_plan, wspec(4)).keep_columns.empty());
  CHECK(build_plan(s, 0.5, MixGranularity::column, MixMode::static_plan, wspec(4)).keep_columns ==
        std::vector<std::size_t>{0, 2});
  CHECK(build_plan(s, 0.75, MixGranularity::column, MixMode::static_plan, wspec(4)).keep_columns ==
        std::vector<std::size_t>{0, 1, 2});
  CHECK(build_plan(s, 1.0, MixGranularity::column, MixMode::static_plan, wspec(4)).keep_columns.size() == 4);
  // 0.25 of 4 keeps the single best column
  CHECK(build_plan(s, 0.25, MixGranularity::column, MixMode::static_plan, wspec(4)).keep_columns ==
        std::vector<std::size_t>{2});
  const auto el = build_plan({0, 5, 2, 7, 1, 3}, 1.0 / 3.0, MixGranularity::element, MixMode::static_plan, wspec(4), 3);
  CHECK(el.keep_elements == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}});
  const auto dyn = build_plan(s, 0.5, MixGranularity::column, MixMode::dynamic_plan, wspec(4));
  CHECK(dyn.keep_columns.empty());
  CHECK(dyn.dynamic_count == 2);
}

TEST_CASE("rate extremes restore or keep the quantized weight") {
  const LayerRecord r = fixtures::layer(3);
  const QuantSpec spec = wspec(2);
  const Matrix q = fake_quant(r.weight, spec, compute_qparams(r.weight, spec));
  const auto scores = score_columns(r, MixMetric::hessian_disturb, spec);
  const auto none = build_plan(scores, 0.0, MixGranularity::column, MixMode::static_plan, spec);
  const auto all = build_plan(scores, 1.0, MixGranularity::column, MixMode::static_plan, spec);
  CHECK(apply_plan(q, r.weight, none) == q);
  CHECK(apply_plan(q, r.weight, all) == r.weight);
  double prev = INFINITY;
  for (double rate : {0.0, 0.01, 0.05, 0.1, 0.2}) {
    const double e =
        output_mse(r, apply_plan(q, r.weight, build_plan(scores, rate, MixGranularity::column, MixMode::static_plan, spec)));
    CHECK(e <= prev);
    prev = e;
  }
}

TEST_CASE("dynamic outlier selection") {
  Rng rng(5);
  Matrix x = fixtures::gaussian(rng, 16, 12);
  CHECK(select_outliers_dynamic(x, 0).empty());
  for (std::size_t t = 0; t < 16; ++t) x(t, 7) *= 100.0f;
  for (std::size_t k = 1; k <= 4; ++k) {
    const auto sel = select_outliers_dynamic(x, k);
    CHECK(std::find(sel.begin(), sel.end(), 7u) != sel.end());
  }
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix b = fixtures::gaussian(rng, 8, 20);
    const auto m = absmax(b, Axis::col);
    std::vector<std::size_t> idx(20);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t p, std::size_t q) { return m[p] > m[q]; });
    idx.resize(5);
    std::sort(idx.begin(), idx.end());
    CHECK(select_outliers_dynamic(b, 5) == idx);
  }
}

TEST_CASE("dynamic selection captures at least the static energy") {
  Rng rng(6);
  fixtures::LayerShape shape;
  const LayerRecord calib = fixtures::layer(11, shape);
  const auto plan = build_plan(score_columns(calib, MixMetric::magnitude, wspec(4)), 0.125, MixGranularity::column,
                               MixMode::static_plan, wspec(4));
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix live = fixtures::layer(200 + trial, shape).activations[0];
    const auto m = absmax(live, Axis::col);
    double stat = 0, dyn = 0;
    for (std::size_t j : plan.keep_columns) stat += m[j];
    for (std::size_t j : select_outliers_dynamic(live, plan.keep_columns.size())) dyn += m[j];
    CHECK(dyn >= stat);
  }
}

TEST_CASE("plans are deterministic") {
  const LayerRecord r = fixtures::layer(12);
  const auto s1 = score_elements(r, MixMetric::hessian_disturb, wspec(2));
  const auto s2 = score_elements(r, MixMetric::hessian_disturb, wspec(2));
  CHECK(s1 == s2);
  const auto a = build_plan(s1, 0.1, MixGranularity::element, MixMode::static_plan, wspec(2), r.weight.cols());
  const auto b = build_plan(s2, 0.1, MixGranularity::element, MixMode::static_plan, wspec(2), r.weight.cols());
  CHECK(a.keep_elements == b.keep_elements);
  CHECK(a.keep_elements.size() == static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(s1.size()))));
}
