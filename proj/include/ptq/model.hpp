#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptq/clip.hpp"
#include "ptq/mixedprec.hpp"
#include "ptq/quant.hpp"
#include "ptq/tensor.hpp"

namespace ptq {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_blocks = 2;
  std::size_t d_ffn = 128;
  std::size_t vocab = 256;
  std::size_t max_seq = 128;
  std::uint64_t seed = 0;

  // ConfigError on zero sizes or d_model not divisible by n_heads.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class LinearMode { fp, weight_only, weight_activation };
std::string to_string(LinearMode m);

// Everything a calibration run may hand to a layer.
struct LayerArtifacts {
  std::vector<float> scale;                 // input divisor s, empty for none
  std::optional<ClipBounds> bounds;         // on the scaled weight
  std::optional<MixedPrecisionPlan> plan;   // full-precision weight columns/elements
  std::optional<QuantizedTensor> reconstruction;  // RH codes, on the scaled weight
  std::optional<GroupParams> act_params;    // static per-tensor activation range
  std::vector<std::size_t> act_keep;        // static full-precision activation columns
  std::size_t dynamic_outliers = 0;         // Dynamic-x column count
};

class QuantizableLinear {
 public:
  QuantizableLinear() = default;
  QuantizableLinear(std::string id, Matrix weight) : id_(std::move(id)), weight_(std::move(weight)) {}

  const std::string& id() const { return id_; }
  const Matrix& weight() const { return weight_; }
  LinearMode mode() const { return mode_; }
  const QuantSpec& w_spec() const { return w_spec_; }
  const QuantSpec& a_spec() const { return a_spec_; }
  const std::vector<float>& input_divisor() const { return divisor_; }
  // Dequantized (and mixed-precision restored) weight on the scaled basis.
  const Matrix& weight_hat() const { return w_hat_; }
  const std::optional<QuantizedTensor>& codes() const { return codes_; }
  const std::optional<GroupParams>& act_params() const { return act_params_; }
  const std::vector<std::size_t>& act_keep() const { return act_keep_; }
  std::size_t dynamic_outliers() const { return dynamic_outliers_; }

  // y = x W^T on the mode's path.
  Matrix forward(const Matrix& x) const;

  // Caches W_hat from the artifacts. ConfigError on inconsistent artifacts.
  void quantize(LinearMode mode, const QuantSpec& w_spec, const std::optional<QuantSpec>& a_spec,
                const LayerArtifacts& artifacts = {});
  // Back to the full-precision path; the original weight is untouched.
  void restore();

  void set_weight(Matrix w);

  // Reinstates a quantized state read back from a container.
  struct State {
    LinearMode mode = LinearMode::fp;
    QuantSpec w_spec;
    QuantSpec a_spec;
    std::vector<float> divisor;
    Matrix w_hat;
    std::optional<QuantizedTensor> codes;
    std::optional<GroupParams> act_params;
    std::vector<std::size_t> act_keep;
    std::size_t dynamic_outliers = 0;
  };
  void load_state(State st);

 private:
  Matrix quantize_input(const Matrix& x, const std::vector<std::size_t>& keep) const;

  std::string id_;
  Matrix weight_;
  LinearMode mode_ = LinearMode::fp;
  QuantSpec w_spec_;
  QuantSpec a_spec_;
  std::vector<float> divisor_;
  Matrix w_scaled_;
  Matrix w_hat_;
  std::optional<QuantizedTensor> codes_;
  std::optional<GroupParams> act_params_;
  std::vector<std::size_t> act_keep_;
  std::size_t dynamic_outliers_ = 0;
};

// KV-cache fake quantization applied per cached token at write time.
// 16 bits stores raw values, 8 bits uses one range per token row, 4 and 2
// bits use per-token groups of `group_size` features.
struct KVCacheQuant {
  int bits = 16;
  std::size_t group_size = 8;

  void validate() const;
  QuantSpec spec() const;
  Matrix apply(const Matrix& kv) const;
  bool operator==(const KVCacheQuant&) const = default;
};

struct Block {
  std::vector<float> norm1;
  std::vector<float> norm2;
  QuantizableLinear q, k, v, o, up, gate, down;

  std::vector<QuantizableLinear*> linears();
  std::vector<const QuantizableLinear*> linears() const;
};

// Called with (layer id, layer input) for every Linear during forward.
using LinearObserver = std::function<void(const std::string&, const Matrix&)>;

// Per-block key/value caches for incremental decoding.
struct DecodeState {
  std::vector<Matrix> k, v;
  std::size_t length = 0;
};

class TinyDecoder {
 public:
  TinyDecoder() = default;
  explicit TinyDecoder(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  Matrix& embedding() { return embedding_; }
  const Matrix& embedding() const { return embedding_; }
  Matrix& positions() { return positions_; }
  const Matrix& positions() const { return positions_; }
  std::vector<float>& final_norm() { return final_norm_; }
  const std::vector<float>& final_norm() const { return final_norm_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  std::vector<QuantizableLinear*> linears();
  std::vector<const QuantizableLinear*> linears() const;
  QuantizableLinear& linear(const std::string& id);
  const QuantizableLinear& linear(const std::string& id) const;

  // Logits [seq x vocab]. NumericalError naming the block/layer on overflow.
  Matrix forward(std::span<const int> tokens, const KVCacheQuant& kv = {},
                 const LinearObserver& observer = nullptr) const;
  // Logits for `tokens` appended after the state's prefix; updates the caches.
  Matrix extend(DecodeState& state, std::span<const int> tokens, const KVCacheQuant& kv = {},
                const LinearObserver& observer = nullptr) const;

  void restore_all();

 private:
  ModelConfig cfg_;
  Matrix embedding_;  // vocab x d_model, tied with the output head
  Matrix positions_;  // max_seq x d_model
  std::vector<float> final_norm_;
  std::vector<Block> blocks_;
};

// Seeded N(0, 1) / sqrt(d_model) weights, unit norm scales.
TinyDecoder init_model(const ModelConfig& cfg);

// The seven Linear ids of block b: attn.{q,k,v,o}, ffn.{up,gate,down}.
std::vector<std::string> block_layer_ids(std::size_t b);

void rms_norm_rows(Matrix& x, std::span<const float> scale, double eps = 1e-5);

}  // namespace ptq
