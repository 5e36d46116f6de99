#include "ptq/gptq.hpp"

#include <cmath>

#include "ptq/error.hpp"

namespace ptq {

double calibration_output_error(const LayerRecord& record, const Matrix& w_hat) {
  double total = 0.0;
  for (const auto& x : record.activations) {
    const Matrix a = matmul_nt(x, record.weight);
    const Matrix b = matmul_nt(x, w_hat);
    total += mean_squared_diff(a, b) * static_cast<double>(a.size());
  }
  return total;
}

ReconstructionResult reconstruct(const LayerRecord& record, const ReconstructionConfig& cfg, const ClipBounds* bounds) {
  if (!record.hessian) throw StateError(record.layer_id + ": reconstruction needs an accumulated Hessian");
  if (!(cfg.damp_ratio > 0.0)) throw ConfigError("damp_ratio must be positive");
  cfg.spec.validate();
  record.validate();

  const Matrix& w = record.weight;
  const std::size_t rows = w.rows(), n = w.cols();
  const GroupLayout layout = make_layout(rows, n, cfg.spec);
  if (bounds && !(bounds->layout == layout)) throw ConfigError(record.layer_id + ": clip bounds layout mismatch");

  // Dampened Hessian and the upper Cholesky factor U of its inverse
  // (H^-1 = U^T U); row j of U carries the compensation for column j given
  // that columns < j are already fixed.
  const Matrix& h = *record.hessian;
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_diag += h(i, i);
  mean_diag /= static_cast<double>(n);
  const double damp = mean_diag > 0.0 ? cfg.damp_ratio * mean_diag : 1.0;
  Matrix hd = h;
  for (std::size_t i = 0; i < n; ++i) hd(i, i) = static_cast<float>(static_cast<double>(hd(i, i)) + damp);

  std::vector<double> lower;
  try {
    const Matrix hinv = spd_solve(hd, Matrix::identity(n));
    Matrix sym(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) sym(i, j) = 0.5f * (hinv(i, j) + hinv(j, i));
    lower = cholesky_lower(sym);
  } catch (const NumericalError& e) {
    throw NumericalError(record.layer_id + ": Cholesky failed after dampening (" + e.what() +
                         "); increase damp_ratio");
  }
  auto u = [&](std::size_t j, std::size_t k) { return lower[k * n + j]; };  // U = L^T

  std::vector<double> work(w.data().begin(), w.data().end());
  ReconstructionResult res;
  res.codes.rows = rows;
  res.codes.cols = n;
  res.codes.spec = cfg.spec;
  res.codes.codes.assign(rows * n, 0);
  res.codes.params.layout = layout;
  res.codes.params.groups.resize(layout.num_groups());
  const bool dynamic_groups = !bounds && cfg.spec.granularity == Granularity::per_group && layout.groups_per_row > 1;
  if (bounds) {
    res.codes.params = to_params(*bounds, cfg.spec);
  } else if (!dynamic_groups) {
    res.codes.params = compute_qparams(w, cfg.spec);
  }
  const int max_code = cfg.spec.max_code();
  res.w_hat = Matrix(rows, n);

  for (std::size_t j = 0; j < n; ++j) {
    if (dynamic_groups && j % layout.group_cols == 0) {
      for (std::size_t i = 0; i < rows; ++i) {
        float lo = 0.0f, hi = 0.0f;
        for (std::size_t c = j; c < j + layout.group_cols; ++c) {
          const float v = static_cast<float>(work[i * n + c]);
          if (c == j) {
            lo = hi = v;
          } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
        res.codes.params.groups[layout.group_of(i, j)] = fit_range(lo, hi, cfg.spec.bits, cfg.spec.symmetric);
      }
    }
    const double ujj = u(j, j);
    for (std::size_t i = 0; i < rows; ++i) {
      const GroupParams& p = res.codes.params.at(i, j);
      const float v = static_cast<float>(work[i * n + j]);
      const int code = quantize_value(v, p, max_code);
      const float q = dequantize_value(code, p);
      res.codes.codes[i * n + j] = static_cast<std::uint8_t>(code);
      res.w_hat(i, j) = q;
      const double err = (work[i * n + j] - q) / ujj;
      if (err == 0.0) continue;
      double* row = work.data() + i * n;
      for (std::size_t k = j + 1; k < n; ++k) row[k] -= err * u(j, k);
    }
  }
  res.w_hat.check_finite("reconstructed weight");
  if (!record.activations.empty()) res.calib_error = calibration_output_error(record, res.w_hat);
  return res;
}

}  // namespace ptq
