#pragma once

#include "ptq/clip.hpp"
#include "ptq/layer_record.hpp"
#include "ptq/quant.hpp"

namespace ptq {

struct ReconstructionConfig {
  double damp_ratio = 0.01;  // fraction of mean diag(H) added to the diagonal
  QuantSpec spec;
};

struct ReconstructionResult {
  QuantizedTensor codes;
  Matrix w_hat;
  double calib_error = 0.0;  // ||X (W - W_hat)^T||_F^2 over the calibration tokens
};

// Greedy column-by-column quantization with inverse-Hessian compensation of
// the columns not yet quantized. Columns are visited in natural order.
// Per-group parameters are fitted when the first column of a group is
// reached; explicit clip bounds, when supplied, fix every group's grid up front.
ReconstructionResult reconstruct(const LayerRecord& record, const ReconstructionConfig& cfg,
                                 const ClipBounds* bounds = nullptr);

// ||X (W - W_hat)^T||_F^2 summed over every calibration batch.
double calibration_output_error(const LayerRecord& record, const Matrix& w_hat);

}  // namespace ptq
