#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ptq/json_io.hpp"
#include "ptq/model.hpp"

namespace ptq {

// Layout shared by .tmw (model) and .tmq (quantized export) files:
//   8-byte magic, u64 little-endian header length, JSON header, blob.
// The header's "tensors" array lists {name, dtype, rows, cols, offset} with
// byte offsets into the blob; dtype is "f32" or "u8".
inline constexpr char kModelMagic[] = "PTQTMW01";
inline constexpr char kExportMagic[] = "PTQTMQ01";

void write_f32_le(std::ostream& out, std::span<const float> values);

class ContainerWriter {
 public:
  void add_f32(const std::string& name, std::size_t rows, std::size_t cols, std::span<const float> values);
  void add_u8(const std::string& name, std::size_t rows, std::size_t cols, std::span<const std::uint8_t> values);
  // header["tensors"] is filled in by write().
  void write(const std::filesystem::path& path, const char* magic, Json header) const;

 private:
  Json tensors_ = Json::array();
  std::string blob_;
};

class ContainerReader {
 public:
  ContainerReader(const std::filesystem::path& path, const char* magic);
  const Json& header() const { return header_; }
  bool has(const std::string& name) const;
  Matrix f32(const std::string& name) const;
  std::vector<float> f32_vector(const std::string& name) const;
  std::vector<std::uint8_t> u8(const std::string& name) const;

 private:
  const Json& entry(const std::string& name, const char* dtype) const;
  Json header_;
  std::string blob_;
};

// Full model, including every layer's quantized state, to a .tmw file.
void save_model(const TinyDecoder& model, const std::filesystem::path& path);
TinyDecoder load_model(const std::filesystem::path& path);

// Integer codes, per-group params, input divisors and full-precision
// overrides of every quantized layer (.tmq). Unquantized layers are stored
// as f32 weights.
void export_quantized(const TinyDecoder& model, const std::filesystem::path& path);

// Reconstructs each quantized layer's W_hat from an export file.
std::vector<std::pair<std::string, Matrix>> read_export(const std::filesystem::path& path);

}  // namespace ptq
