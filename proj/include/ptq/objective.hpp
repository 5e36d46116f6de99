#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ptq/layer_record.hpp"
#include "ptq/quant.hpp"
#include "ptq/tensor.hpp"

namespace ptq {

// Double-precision copy of a symmetric matrix used for repeated e^T H e.
class QuadraticForm {
 public:
  QuadraticForm() = default;
  explicit QuadraticForm(const Matrix& h);

  std::size_t dim() const { return n_; }
  const double* row(std::size_t i) const { return h_.data() + i * n_; }
  double at(std::size_t i, std::size_t j) const { return h_[i * n_ + j]; }

  double eval(std::span<const double> e) const;
  // out = H e
  void apply(std::span<const double> e, std::span<double> out) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> h_;
};

// Hessian of the record, computed from activations when not cached.
Matrix hessian_of(const LayerRecord& record);

// Layer-output MSE, mean over tokens and outputs of ((W - W_hat) x)^2,
// expressed through H = (2/T) X^T X: sum_i e_i H e_i^T / (2 * rows).
double hessian_output_mse(const Matrix& w_ref, const Matrix& w_hat, const QuadraticForm& h);

// Static per-tensor activation range: per-batch min and max averaged over
// the batches, then fitted with the spec's symmetry.
GroupParams static_activation_params(std::span<const Matrix> batches, const QuantSpec& spec_a);

// Fake quantization of a layer input as the deployed layer applies it:
// dynamic specs work on each batch alone, a static per-tensor spec uses the
// range calibrated on the batches given at construction.
class InputQuantizer {
 public:
  InputQuantizer(const QuantSpec& spec_a, std::span<const Matrix> calibration);
  Matrix operator()(const Matrix& x) const;
  const QuantSpec& spec() const { return spec_; }
  const std::optional<GroupParams>& static_params() const { return static_; }

 private:
  QuantSpec spec_;
  std::optional<GroupParams> static_;
};

// Mean over batches, tokens and outputs of (x W_ref^T - q(x) W_hat^T)^2.
double quantized_layer_mse(const LayerRecord& record, const Matrix& w_hat, const InputQuantizer* aq);

// Same quantity computed directly: mean((x W_ref^T - y_q)^2).
double activation_output_mse(const Matrix& x, const Matrix& w_ref, const Matrix& y_q);

}  // namespace ptq
