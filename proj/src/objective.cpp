#include "ptq/objective.hpp"

#include <algorithm>

#include "ptq/error.hpp"

namespace ptq {

QuadraticForm::QuadraticForm(const Matrix& h) : n_(h.rows()), h_(h.data().begin(), h.data().end()) {
  if (h.rows() != h.cols()) throw ShapeError("quadratic form needs a square matrix");
}

double QuadraticForm::eval(std::span<const double> e) const {
  double total = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    if (e[i] == 0.0) continue;
    const double* hr = row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < n_; ++j) s += hr[j] * e[j];
    total += e[i] * s;
  }
  return total;
}

void QuadraticForm::apply(std::span<const double> e, std::span<double> out) const {
  for (std::size_t i = 0; i < n_; ++i) {
    const double* hr = row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < n_; ++j) s += hr[j] * e[j];
    out[i] = s;
  }
}

Matrix hessian_of(const LayerRecord& record) {
  if (record.hessian) return *record.hessian;
  return *accumulate_hessian(record).hessian;
}

double hessian_output_mse(const Matrix& w_ref, const Matrix& w_hat, const QuadraticForm& h) {
  if (w_ref.rows() != w_hat.rows() || w_ref.cols() != w_hat.cols() || h.dim() != w_ref.cols()) {
    throw ShapeError("hessian_output_mse: shape mismatch");
  }
  std::vector<double> e(w_ref.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < w_ref.rows(); ++i) {
    const auto a = w_ref.row(i);
    const auto b = w_hat.row(i);
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = static_cast<double>(a[j]) - b[j];
    total += h.eval(e);
  }
  return total / (2.0 * static_cast<double>(w_ref.rows()));
}

GroupParams static_activation_params(std::span<const Matrix> batches, const QuantSpec& spec_a) {
  if (batches.empty()) throw StateError("static activation range needs calibration batches");
  double lo_sum = 0.0, hi_sum = 0.0;
  for (const auto& x : batches) {
    if (x.empty()) throw ShapeError("empty calibration batch");
    float lo = x.data()[0], hi = x.data()[0];
    for (float v : x.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    lo_sum += lo;
    hi_sum += hi;
  }
  const double nb = static_cast<double>(batches.size());
  return fit_range(static_cast<float>(lo_sum / nb), static_cast<float>(hi_sum / nb), spec_a.bits, spec_a.symmetric);
}

InputQuantizer::InputQuantizer(const QuantSpec& spec_a, std::span<const Matrix> calibration) : spec_(spec_a) {
  spec_.validate();
  if (!spec_.dynamic) {
    if (spec_.granularity != Granularity::per_tensor) {
      throw ConfigError("static activation quantization is per-tensor only");
    }
    static_ = static_activation_params(calibration, spec_);
  }
}

Matrix InputQuantizer::operator()(const Matrix& x) const {
  if (spec_.dynamic) return fake_quant(x, spec_);
  return fake_quant(x, spec_, QuantParams{make_layout(x.rows(), x.cols(), spec_), {*static_}});
}

double quantized_layer_mse(const LayerRecord& record, const Matrix& w_hat, const InputQuantizer* aq) {
  if (record.activations.empty()) throw StateError(record.layer_id + ": layer MSE needs calibration activations");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& x : record.activations) {
    const Matrix y = matmul_nt(x, record.weight);
    const Matrix yq = matmul_nt(aq ? (*aq)(x) : x, w_hat);
    sum += mean_squared_diff(y, yq) * static_cast<double>(y.size());
    count += y.size();
  }
  return sum / static_cast<double>(count);
}

double activation_output_mse(const Matrix& x, const Matrix& w_ref, const Matrix& y_q) {
  return mean_squared_diff(matmul_nt(x, w_ref), y_q);
}

}  // namespace ptq
