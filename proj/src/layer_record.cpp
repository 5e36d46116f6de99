#include "ptq/layer_record.hpp"

#include "ptq/error.hpp"

namespace ptq {

std::size_t LayerRecord::token_count() const {
  std::size_t t = 0;
  for (const auto& x : activations) t += x.rows();
  return t;
}

Matrix LayerRecord::stacked_activations() const { return vstack(activations); }

void LayerRecord::validate() const {
  for (const auto& x : activations) {
    if (x.cols() != weight.cols()) {
      throw ShapeError(layer_id + ": activation width " + std::to_string(x.cols()) + " != weight input width " +
                       std::to_string(weight.cols()));
    }
  }
  if (hessian && (hessian->rows() != weight.cols() || hessian->cols() != weight.cols())) {
    throw ShapeError(layer_id + ": hessian shape does not match weight input width");
  }
}

LayerRecord accumulate_hessian(LayerRecord record) {
  if (record.activations.empty() || record.token_count() == 0) {
    throw StateError(record.layer_id + ": no activations to accumulate a Hessian from");
  }
  record.validate();
  const std::size_t n = record.weight.cols();
  std::vector<double> acc(n * n, 0.0);
  for (const auto& x : record.activations) {
    for (std::size_t t = 0; t < x.rows(); ++t) {
      const auto r = x.row(t);
      for (std::size_t i = 0; i < n; ++i) {
        const double ri = r[i];
        if (ri == 0.0) continue;
        double* dst = acc.data() + i * n;
        for (std::size_t j = i; j < n; ++j) dst[j] += ri * r[j];
      }
    }
  }
  const double scale = 2.0 / static_cast<double>(record.token_count());
  Matrix h(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const float v = static_cast<float>(acc[i * n + j] * scale);
      h(i, j) = v;
      h(j, i) = v;
    }
  }
  record.hessian = std::move(h);
  return record;
}

}  // namespace ptq
