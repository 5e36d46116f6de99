#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "ptq/calib.hpp"
#include "ptq/json_io.hpp"
#include "ptq/model.hpp"

namespace ptq {

struct NllSum {
  double nll = 0.0;
  std::size_t count = 0;
};

// Next-token negative log-likelihood (natural log) of tokens[1..] under
// logits rows [0..T-2], with a subtract-max log-softmax.
NllSum sequence_nll(const Matrix& logits, std::span<const int> tokens);

double perplexity_from_nll(const NllSum& s);

// exp(mean NLL) over every next-token position of the corpus.
double perplexity(const TinyDecoder& model, const CalibCorpus& corpus, const KVCacheQuant& kv = {},
                  std::size_t jobs = 1);

struct EvalReport {
  std::string recipe;
  std::string bits;
  double ppl_fp = 0.0;
  double ppl_q = 0.0;
  double logit_max_abs = 0.0;
  double logit_mean_abs = 0.0;
  // Per layer: mean squared difference between the full-precision layer's
  // output in the full-precision model and the quantized layer's output in
  // the quantized model, over the evaluation corpus.
  std::map<std::string, double> layer_mse;
  // Per layer: output MSE of the quantized layer against the full-precision
  // layer on the calibration activations (filled by the pipeline).
  std::map<std::string, double> calib_layer_mse;
  Json extra = Json::object();

  double total_layer_mse() const;
  double total_calib_layer_mse() const;
  Json to_json() const;
  static EvalReport from_json(const Json& j);
};

// The reference model runs with a full-precision KV cache, the quantized
// one with `kv`. ConfigError when the two models do not share a configuration.
EvalReport compare(const TinyDecoder& model_fp, const TinyDecoder& model_q, const CalibCorpus& corpus,
                   const KVCacheQuant& kv = {}, std::size_t jobs = 1);

}  // namespace ptq
