#include <cmath>
#include <limits>

#include "doctest.h"
#include "fixtures.hpp"
#include "ptq/error.hpp"
#include "ptq/parallel.hpp"
#include "ptq/rng.hpp"
#include "ptq/tensor.hpp"

using namespace ptq;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += static_cast<double>(a(i, t)) * b(t, j);
      c(i, j) = static_cast<float>(s);
    }
  return c;
}

Matrix random_spd(Rng& rng, std::size_t n) {
  const Matrix a = fixtures::gaussian(rng, n, n);
  Matrix h = matmul_nt(a, a);
  for (std::size_t i = 0; i < n; ++i) h(i, i) += 1.0f;
  return h;
}

}  // namespace

TEST_CASE("matmul hand examples") {
  CHECK(matmul(Matrix::identity(2), Matrix::identity(2)) == Matrix::identity(2));
  const Matrix c = matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{1}, {1}});
  CHECK(c == Matrix{{3}, {7}});
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matmul equals the triple loop exactly") {
  Rng rng(11);
  const Matrix a = fixtures::gaussian(rng, 16, 16), b = fixtures::gaussian(rng, 16, 16);
  CHECK(matmul(a, b) == naive_matmul(a, b));
  CHECK(matmul(a, Matrix::identity(16)) == a);
}

TEST_CASE("matmul_nt agrees with matmul on the transpose for short and tall inputs") {
  Rng rng(12);
  for (std::size_t m : {1, 3, 8, 40}) {
    const Matrix a = fixtures::gaussian(rng, m, 24), b = fixtures::gaussian(rng, 10, 24);
    CHECK(matmul_nt(a, b) == matmul(a, transpose(b)));
  }
}

TEST_CASE("absmax examples and scan oracle") {
  CHECK(absmax_all(Matrix{{-3, 1}}) == 3.0f);
  CHECK(absmax(Matrix{{-3, 1}, {2, -5}}, Axis::col) == std::vector<float>{3, 5});
  CHECK(absmax(Matrix{{-3, 1}, {2, -5}}, Axis::row) == std::vector<float>{3, 5});
  CHECK_THROWS_AS(absmax(Matrix(), Axis::all), ShapeError);
  Rng rng(13);
  const Matrix a = fixtures::gaussian(rng, 8, 8);
  const auto cols = absmax(a, Axis::col);
  const auto rows = absmax(a, Axis::row);
  float global = 0;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::fabs(a(i, j)) <= cols[j]);
      CHECK(std::fabs(a(i, j)) <= rows[i]);
      global = std::max(global, std::fabs(a(i, j)));
    }
  CHECK(absmax_all(a) == global);
  CHECK(absmax_all(a) == *std::max_element(rows.begin(), rows.end()));
}

TEST_CASE("spd_solve examples") {
  Rng rng(14);
  const Matrix rhs = fixtures::gaussian(rng, 3, 2);
  CHECK(spd_solve(Matrix::identity(3), rhs) == rhs);
  const Matrix x = spd_solve(Matrix{{2, 0}, {0, 4}}, Matrix{{2}, {4}});
  CHECK(x(0, 0) == doctest::Approx(1.0));
  CHECK(x(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("spd_solve residual on random SPD matrices") {
  Rng rng(15);
  for (int k = 0; k < 20; ++k) {
    const Matrix h = random_spd(rng, 6);
    const Matrix inv = spd_solve(h, Matrix::identity(6));
    CHECK(max_abs_diff(matmul(h, inv), Matrix::identity(6)) <= 1e-4);
    const Matrix rhs = fixtures::gaussian(rng, 6, 3);
    const Matrix x = spd_solve(h, rhs);
    CHECK(max_abs_diff(matmul(h, x), rhs) <= 1e-4 * absmax_all(rhs));
  }
}

TEST_CASE("non-SPD input names the failing pivot") {
  try {
    spd_solve(Matrix{{1, 0}, {0, -1}}, Matrix::identity(2));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("non-finite entries are rejected") {
  CHECK_THROWS_AS(Matrix(1, 2, {1.0f, std::numeric_limits<float>::quiet_NaN()}), NumericalError);
  CHECK_THROWS_AS(Matrix(1, 1, {std::numeric_limits<float>::infinity()}), NumericalError);
  CHECK_THROWS_AS(Matrix(2, 2, {1.0f}), ShapeError);
}

TEST_CASE("vstack and diffs") {
  const Matrix parts[] = {Matrix{{1, 2}}, Matrix{{3, 4}, {5, 6}}};
  CHECK(vstack(parts) == Matrix{{1, 2}, {3, 4}, {5, 6}});
  CHECK(max_abs_diff(Matrix{{1, 2}}, Matrix{{1, 5}}) == 3.0);
  CHECK(mean_squared_diff(Matrix{{1, 2}}, Matrix{{1, 4}}) == 2.0);
}

TEST_CASE("rng streams are reproducible and split independently of consumption order") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  const Rng root(7);
  Rng s1 = root.split(1);
  const auto first = s1.next_u64();
  Rng root2(7);
  root2.next_u64();  // consuming the parent does not move its children
  CHECK(root2.split(1).next_u64() == first);
  CHECK(root.split(2).next_u64() != first);
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.uniform_int(7) < 7u);
  }
}

TEST_CASE("normal draws have unit moments") {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::fabs(s / n) < 0.05);
  CHECK(std::fabs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("parallel_for visits every index once for any job count") {
  for (std::size_t jobs : {1, 2, 5}) {
    std::vector<int> hits(37, 0);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
}
