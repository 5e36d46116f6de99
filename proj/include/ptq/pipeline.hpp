#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptq/calib.hpp"
#include "ptq/corpus_gen.hpp"
#include "ptq/eval.hpp"
#include "ptq/json_io.hpp"
#include "ptq/mixedprec.hpp"
#include "ptq/model.hpp"
#include "ptq/recipe.hpp"

namespace ptq {

// Where a token corpus comes from. `text_seed` drives generated text and
// `sample_seed` the window offsets (or the model's sampling stream).
struct CorpusSource {
  enum class Kind { file, generated, model_samples };
  Kind kind = Kind::generated;
  std::filesystem::path path;
  CorpusDomain domain = CorpusDomain::prose;
  std::size_t bytes = 65536;
  std::size_t n_samples = 16;
  std::size_t seq_len = 64;
  std::optional<std::uint64_t> text_seed;
  std::optional<std::uint64_t> sample_seed;
};

struct MixConfig {
  bool enabled = false;
  MixMetric metric = MixMetric::hessian_disturb;
  double rate = 0.0;  // weight-only plans
  MixGranularity granularity = MixGranularity::column;
  MixMode mode = MixMode::static_plan;
  std::optional<std::size_t> x;  // weight-activation column count, default cols / 8
};

struct LearnConfig {
  std::size_t epochs = 4;
  double step = 0.05;
};

struct PipelineConfig {
  std::string recipe;
  int w_bits = 16;
  int a_bits = 16;
  QuantSpec w;  // resolved against the paper defaults for w_bits
  QuantSpec a;
  KVCacheQuant kv;
  MixConfig mix;
  std::map<std::string, int> overrides;  // layer id or suffix ("down") -> weight bits
  CorpusSource corpus;
  CorpusSource eval;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> model_path;
  ModelConfig model;
  double damp_ratio = 0.01;
  ClipObjective clip_objective = ClipObjective::output;
  LearnConfig learn;
  bool force = false;

  bool weight_only() const { return a_bits == 16; }
  bool quantizes_weights() const { return w_bits != 16; }
  // Fills unset seeds and validates bits, specs, recipe and mix settings.
  void resolve();
  // ConfigError listing unknown keys; the result is resolved.
  static PipelineConfig from_json(const Json& j);
  // Fully materialized configuration (the run manifest).
  Json to_json() const;
};

struct LayerOutcome {
  std::string layer_id;
  LayerArtifacts artifacts;
  QuantSpec w_spec;
  std::optional<float> gamma;
  std::size_t clipped_groups = 0;
  double transform_objective = 0.0;  // scale objective at the chosen s (0 without a transform)
  double clip_objective = 0.0;       // clip objective of the final bounds (0 without bounds)
};

using StepTimes = std::map<std::string, double>;

// Runs the recipe on one calibration record: transform, clip, learning steps,
// reconstruction or plain quantization artifacts, mixed-precision plan.
LayerOutcome quantize_record(const LayerRecord& record, const Recipe& recipe, const PipelineConfig& cfg,
                             StepTimes* times = nullptr);

// Weight spec for one layer after applying bit overrides.
QuantSpec layer_weight_spec(const PipelineConfig& cfg, const std::string& layer_id);

TinyDecoder build_model(const PipelineConfig& cfg);
CalibCorpus build_corpus(const CorpusSource& src, const TinyDecoder& model_fp);

struct PipelineResult {
  TinyDecoder model_q;
  EvalReport report;
  Json timing;  // wall-clock seconds per step; kept out of the report so reports stay byte-stable
  std::vector<LayerOutcome> layers;
};

PipelineResult run_recipe(const PipelineConfig& cfg, const TinyDecoder& model_fp, const CalibCorpus& calib,
                          const CalibCorpus& eval, std::size_t jobs = 1);
// Captured activations with accumulated Hessians, in model layer order.
std::vector<LayerRecord> calibration_records(const TinyDecoder& model_fp, const CalibCorpus& calib, std::size_t jobs = 1,
                                             StepTimes* times = nullptr);
// Same as run_recipe on records that were captured beforehand.
PipelineResult run_recipe_records(const PipelineConfig& cfg, const TinyDecoder& model_fp,
                                  const std::vector<LayerRecord>& records, const CalibCorpus& eval,
                                  std::size_t jobs = 1, StepTimes* prior_times = nullptr);
PipelineResult run_pipeline(const PipelineConfig& cfg, std::size_t jobs = 1);

struct Goal {
  bool weight_only = true;
  int w_bits = 4;
  int a_bits = 16;
  bool kv = false;
};
enum class Budget { fast, thorough };
Budget parse_budget(const std::string& s);

std::string best_practice_recipe(const Goal& goal, Budget budget);
// Base config with recipe, bits, default specs and KV settings filled in.
PipelineConfig best_practice_config(const Goal& goal, Budget budget, PipelineConfig base = {});
PipelineResult best_practice(const Goal& goal, Budget budget, const TinyDecoder& model_fp, const CalibCorpus& calib,
                             const CalibCorpus& eval, PipelineConfig base = {}, std::size_t jobs = 1);

}  // namespace ptq
