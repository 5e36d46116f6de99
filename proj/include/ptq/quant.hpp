#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ptq/tensor.hpp"

namespace ptq {

enum class Granularity { per_tensor, per_channel, per_group, per_token };

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& s);

// Describes how a tensor is quantized. Groups always run along rows: a
// per_channel weight has one group per output channel, a per_token activation
// one group per token, and per_group splits each row into runs of group_size.
struct QuantSpec {
  int bits = 8;
  bool symmetric = false;
  Granularity granularity = Granularity::per_channel;
  std::size_t group_size = 0;
  bool dynamic = false;

  int max_code() const { return (1 << bits) - 1; }
  // Throws ConfigError on unsupported bits, missing group size, or static per_token.
  void validate() const;

  bool operator==(const QuantSpec&) const = default;
};

// Bit-widths the quantizer accepts.
bool supported_bits(int bits);

// Partition of a rows x cols tensor into quantization groups.
struct GroupLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t group_cols = 0;  // elements per group along a row
  std::size_t groups_per_row = 0;
  bool whole_tensor = false;

  std::size_t num_groups() const { return whole_tensor ? 1 : rows * groups_per_row; }
  std::size_t group_of(std::size_t i, std::size_t j) const {
    return whole_tensor ? 0 : i * groups_per_row + j / group_cols;
  }
  bool operator==(const GroupLayout&) const = default;
};

// A group size larger than the row collapses to one group per row; a smaller
// group size must divide the row length (ShapeError otherwise).
GroupLayout make_layout(std::size_t rows, std::size_t cols, const QuantSpec& spec);

// Affine parameters of a single group.
struct GroupParams {
  double delta = 1e-8;
  std::int32_t zero_point = 0;
  float lower = 0.0f;
  float upper = 0.0f;
};

// Fits (delta, zero_point) to a value range. Asymmetric ranges are widened to
// contain 0 so the zero point is always a valid code; symmetric ranges use
// [-m, m] with m = max(|lo|, |hi|) and the midpoint code. An empty range gets
// delta = 1e-8 and zero point 0.
GroupParams fit_range(float lo, float hi, int bits, bool symmetric);

inline int quantize_value(float x, const GroupParams& p, int max_code);
inline float dequantize_value(int code, const GroupParams& p);
// Round-half-to-even, clamp to [0, 2^b - 1], dequantize.
float fake_quant_value(float x, const GroupParams& p, int max_code);

struct QuantParams {
  GroupLayout layout;
  std::vector<GroupParams> groups;

  std::size_t num_groups() const { return groups.size(); }
  const GroupParams& at(std::size_t i, std::size_t j) const { return groups[layout.group_of(i, j)]; }
};

struct QuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> codes;  // unpacked, one byte per code
  QuantParams params;
  QuantSpec spec;
};

// Per-group range fit: min/max for asymmetric, +-max|x| for symmetric.
QuantParams compute_qparams(const Matrix& x, const QuantSpec& spec);

// Builds parameters from explicit per-group bounds (e.g. clipping results).
QuantParams params_from_bounds(const GroupLayout& layout, const std::vector<float>& lower,
                               const std::vector<float>& upper, const QuantSpec& spec);

// x_hat = (clamp(round(x / delta) + z, 0, 2^b - 1) - z) * delta.
// Without params the spec must be dynamic and ranges are computed from x.
Matrix fake_quant(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params = std::nullopt);

QuantizedTensor quantize(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params = std::nullopt);
Matrix dequantize(const QuantizedTensor& q);

struct QuantError {
  double mse = 0.0;
  double max_abs = 0.0;
};

// Error of fake_quant(x). Params default to a fit on x itself.
QuantError quant_error(const Matrix& x, const QuantSpec& spec, const std::optional<QuantParams>& params = std::nullopt);

// Default weight spec: weight-only uses asymmetric per-group (g=64 at 2 bits,
// g=128 otherwise); weight-activation uses asymmetric per-channel.
QuantSpec default_weight_spec(int bits, bool weight_only);
// Default activation spec: asymmetric dynamic per-token.
QuantSpec default_activation_spec(int bits);

// "w4a16g128"-style descriptor; pass 16 for unquantized operands.
std::string describe_bits(int w_bits, int a_bits, std::size_t group_size);

// ---- inline definitions ----

inline int quantize_value(float x, const GroupParams& p, int max_code) {
  const double q = std::nearbyint(static_cast<double>(x) / p.delta) + p.zero_point;
  return static_cast<int>(q < 0.0 ? 0.0 : (q > max_code ? max_code : q));
}

inline float dequantize_value(int code, const GroupParams& p) {
  return static_cast<float>(static_cast<double>(code - p.zero_point) * p.delta);
}

}  // namespace ptq
