#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ptq {

// Dense row-major matrix of 32-bit floats. Entries are checked finite at
// construction; arithmetic helpers accumulate in double.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
  Matrix(std::initializer_list<std::initializer_list<float>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  float& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<float> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  // Throws NumericalError naming `what` if any entry is NaN or infinite.
  void check_finite(const char* what = "matrix") const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

enum class Axis { row, col, all };

// c = a * b, each entry accumulated in double in index order, then rounded.
Matrix matmul(const Matrix& a, const Matrix& b);
// c = a * b^T. Same accumulation order as matmul(a, transpose(b)).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Per-row, per-column, or global max |entry|. Axis::all returns a single value.
std::vector<float> absmax(const Matrix& a, Axis axis);
float absmax_all(const Matrix& a);

// Lower-triangular L with h = L L^T, computed in double. Throws NumericalError
// naming the first non-positive pivot.
std::vector<double> cholesky_lower(const Matrix& h);

// Solves h x = rhs for symmetric positive definite h via Cholesky.
Matrix spd_solve(const Matrix& h, const Matrix& rhs);

// Row-wise concatenation; all inputs must share a column count.
Matrix vstack(std::span<const Matrix> parts);

double max_abs_diff(const Matrix& a, const Matrix& b);
double mean_squared_diff(const Matrix& a, const Matrix& b);

}  // namespace ptq
