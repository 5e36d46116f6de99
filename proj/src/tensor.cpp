#include "ptq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ptq/error.hpp"

namespace ptq {

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  check_finite();
}

Matrix::Matrix(std::initializer_list<std::initializer_list<float>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  check_finite();
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

void Matrix::check_finite(const char* what) const {
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw NumericalError(std::string(what) + ": non-finite entry at (" + std::to_string(k / std::max<std::size_t>(cols_, 1)) +
                           ", " + std::to_string(k % std::max<std::size_t>(cols_, 1)) + ")");
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + dims(a) + " * " + dims(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix c(m, n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const auto ar = a.row(i);
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ar[t];
      const auto br = b.row(t);
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(br[j]);
    }
    auto cr = c.row(i);
    for (std::size_t j = 0; j < n; ++j) cr[j] = static_cast<float>(acc[j]);
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + dims(a) + " * (" + dims(b) + ")^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  // Same per-entry summation order as below, but the streaming loop
  // vectorizes; worth the transpose once there are a few rows.
  if (m >= 8) return matmul(a, transpose(b));
  Matrix c(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a.row(i).data();
    float* cr = c.row(i).data();
    std::size_t j = 0;
    // Four output columns at a time; each entry keeps its own sequential sum.
    for (; j + 4 <= n; j += 4) {
      const float* b0 = b.row(j).data();
      const float* b1 = b.row(j + 1).data();
      const float* b2 = b.row(j + 2).data();
      const float* b3 = b.row(j + 3).data();
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (std::size_t t = 0; t < k; ++t) {
        const double av = ar[t];
        s0 += av * static_cast<double>(b0[t]);
        s1 += av * static_cast<double>(b1[t]);
        s2 += av * static_cast<double>(b2[t]);
        s3 += av * static_cast<double>(b3[t]);
      }
      cr[j] = static_cast<float>(s0);
      cr[j + 1] = static_cast<float>(s1);
      cr[j + 2] = static_cast<float>(s2);
      cr[j + 3] = static_cast<float>(s3);
    }
    for (; j < n; ++j) {
      const float* br = b.row(j).data();
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<double>(ar[t]) * static_cast<double>(br[t]);
      cr[j] = static_cast<float>(s);
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

std::vector<float> absmax(const Matrix& a, Axis axis) {
  if (a.empty()) throw ShapeError("absmax of empty matrix");
  switch (axis) {
    case Axis::row: {
      std::vector<float> out(a.rows(), 0.0f);
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (float v : a.row(i)) out[i] = std::max(out[i], std::fabs(v));
      return out;
    }
    case Axis::col: {
      std::vector<float> out(a.cols(), 0.0f);
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) out[j] = std::max(out[j], std::fabs(r[j]));
      }
      return out;
    }
    case Axis::all:
      break;
  }
  float m = 0.0f;
  for (float v : a.data()) m = std::max(m, std::fabs(v));
  return {m};
}

float absmax_all(const Matrix& a) { return absmax(a, Axis::all)[0]; }

std::vector<double> cholesky_lower(const Matrix& h) {
  if (h.rows() != h.cols()) throw ShapeError("cholesky: matrix is " + dims(h));
  const std::size_t n = h.rows();
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = h(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0)) {
      throw NumericalError("cholesky: non-positive pivot at index " + std::to_string(j) + " (value " +
                           std::to_string(d) + ")");
    }
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = h(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  return l;
}

Matrix spd_solve(const Matrix& h, const Matrix& rhs) {
  if (h.rows() != h.cols() || h.rows() != rhs.rows()) {
    throw ShapeError("spd_solve: " + dims(h) + " with rhs " + dims(rhs));
  }
  const std::size_t n = h.rows(), m = rhs.cols();
  const auto l = cholesky_lower(h);
  Matrix x(n, m);
  std::vector<double> y(n);
  for (std::size_t c = 0; c < m; ++c) {
    // L y = b
    for (std::size_t i = 0; i < n; ++i) {
      double s = rhs(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
      y[i] = s / l[i * n + i];
    }
    // L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * y[k];
      y[ii] = s / l[ii * n + ii];
    }
    for (std::size_t i = 0; i < n; ++i) x(i, c) = static_cast<float>(y[i]);
  }
  x.check_finite("spd_solve result");
  return x;
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * cols));
    r += p.rows();
  }
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: " + dims(a) + " vs " + dims(b));
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    m = std::max(m, std::fabs(static_cast<double>(a.data()[k]) - b.data()[k]));
  return m;
}

double mean_squared_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mean_squared_diff: " + dims(a) + " vs " + dims(b));
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a.data()[k]) - b.data()[k];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace ptq
