#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ptq/json_io.hpp"
#include "ptq/pipeline.hpp"

namespace ptq {

// Naive (min-max, no calibration algorithm) quantization over a grid of
// weight-only {bits x sym/asym x group} cells and w4a4 {weight sym/asym x
// activation sym/asym x tk/ts/sts} cells, for every seed.
struct SweepConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ModelConfig model{128, 4, 2, 256, 256, 128, 0};
  CorpusSource corpus;
  CorpusSource eval = [] {
    CorpusSource s;
    s.kind = CorpusSource::Kind::model_samples;
    s.n_samples = 64;  // PPL gaps between neighbouring cells are a few percent
    return s;
  }();
  std::vector<int> weight_bits{2, 3, 4};
  std::vector<std::size_t> groups{64, 128, 0};  // 0 means per-channel
  bool weight_activation = true;

  static SweepConfig from_json(const Json& j);
  Json to_json() const;
};

struct SweepCell {
  std::string family;  // weight_only | weight_activation
  std::uint64_t seed = 0;
  int w_bits = 16;
  bool w_sym = false;
  std::string w_gran;  // g64, g128, ch
  int a_bits = 16;
  bool a_sym = false;
  std::string a_gran;  // tk (dynamic per-token), ts (dynamic per-tensor), sts (static per-tensor), "-" for none
  std::string status = "ok";
  double ppl_fp = 0.0;
  double ppl_q = 0.0;
  double calib_mse = 0.0;
  std::string error;
};

// Cells in a fixed order (seed-major, then the grid); failed cells carry
// status "error" and the message instead of being dropped.
std::vector<SweepCell> run_sweep(const SweepConfig& cfg, std::size_t jobs = 1);

const char* sweep_csv_header();
std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace ptq
