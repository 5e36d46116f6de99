#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "ptq/tensor.hpp"

namespace ptq {

// One Linear layer's weight (out x in) plus the inputs it saw during
// calibration (one tokens x in matrix per calibration sequence).
struct LayerRecord {
  std::string layer_id;
  Matrix weight;
  std::vector<Matrix> activations;
  std::optional<Matrix> hessian;  // (2/T) * sum X^T X, in x in

  std::size_t token_count() const;
  Matrix stacked_activations() const;
  // ShapeError if an activation's width differs from the weight's input width.
  void validate() const;
};

// H = (2/T) * sum over batches of X^T X with T the total token count.
// StateError when the record carries no activations.
LayerRecord accumulate_hessian(LayerRecord record);

}  // namespace ptq
