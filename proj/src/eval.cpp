#include "ptq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ptq/error.hpp"
#include "ptq/parallel.hpp"

namespace ptq {

NllSum sequence_nll(const Matrix& logits, std::span<const int> tokens) {
  if (logits.rows() != tokens.size()) throw ShapeError("logit rows must match the token count");
  NllSum s;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    const auto row = logits.row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    const double nll = -(static_cast<double>(row[static_cast<std::size_t>(tokens[t + 1])]) - mx - std::log(z));
    if (!std::isfinite(nll)) throw NumericalError("non-finite NLL at position " + std::to_string(t));
    s.nll += nll;
    ++s.count;
  }
  return s;
}

double perplexity_from_nll(const NllSum& s) {
  if (s.count == 0) throw ShapeError("perplexity needs at least one next-token position");
  return std::exp(s.nll / static_cast<double>(s.count));
}

double perplexity(const TinyDecoder& model, const CalibCorpus& corpus, const KVCacheQuant& kv, std::size_t jobs) {
  if (corpus.sequences.empty()) throw ShapeError("perplexity needs a nonempty corpus");
  corpus.validate(model.config().vocab);
  std::vector<NllSum> parts(corpus.sequences.size());
  parallel_for(parts.size(), jobs == 0 ? default_jobs() : jobs, [&](std::size_t i) {
    parts[i] = sequence_nll(model.forward(corpus.sequences[i], kv), corpus.sequences[i]);
  });
  NllSum total;
  for (const auto& p : parts) {
    total.nll += p.nll;
    total.count += p.count;
  }
  return perplexity_from_nll(total);
}

double EvalReport::total_layer_mse() const {
  double t = 0.0;
  for (const auto& [k, v] : layer_mse) t += v;
  return t;
}

double EvalReport::total_calib_layer_mse() const {
  double t = 0.0;
  for (const auto& [k, v] : calib_layer_mse) t += v;
  return t;
}

Json EvalReport::to_json() const {
  Json j;
  j["recipe"] = recipe;
  j["bits"] = bits;
  j["ppl_fp"] = ppl_fp;
  j["ppl_q"] = ppl_q;
  j["logit_max_abs"] = logit_max_abs;
  j["logit_mean_abs"] = logit_mean_abs;
  j["total_layer_mse"] = total_layer_mse();
  j["total_calib_layer_mse"] = total_calib_layer_mse();
  j["layer_mse"] = Json::object();
  for (const auto& [k, v] : layer_mse) j["layer_mse"][k] = v;
  j["calib_layer_mse"] = Json::object();
  for (const auto& [k, v] : calib_layer_mse) j["calib_layer_mse"][k] = v;
  j["extra"] = extra;
  return j;
}

EvalReport EvalReport::from_json(const Json& j) {
  EvalReport r;
  try {
    r.recipe = j.at("recipe").get<std::string>();
    r.bits = j.at("bits").get<std::string>();
    r.ppl_fp = j.at("ppl_fp").get<double>();
    r.ppl_q = j.at("ppl_q").get<double>();
    r.logit_max_abs = j.at("logit_max_abs").get<double>();
    r.logit_mean_abs = j.at("logit_mean_abs").get<double>();
    for (const auto& [k, v] : j.at("layer_mse").items()) r.layer_mse[k] = v.get<double>();
    for (const auto& [k, v] : j.at("calib_layer_mse").items()) r.calib_layer_mse[k] = v.get<double>();
    r.extra = j.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

namespace {

struct SequenceStats {
  NllSum fp, q;
  double logit_max = 0.0, logit_sum = 0.0;
  std::size_t logit_count = 0;
  std::map<std::string, std::pair<double, std::size_t>> layer;  // sum of squares, count
};

}  // namespace

EvalReport compare(const TinyDecoder& model_fp, const TinyDecoder& model_q, const CalibCorpus& corpus,
                   const KVCacheQuant& kv, std::size_t jobs) {
  if (!(model_fp.config() == model_q.config())) throw ConfigError("compare: models have different configurations");
  if (corpus.sequences.empty()) throw ShapeError("compare needs a nonempty corpus");
  corpus.validate(model_fp.config().vocab);

  std::vector<SequenceStats> parts(corpus.sequences.size());
  parallel_for(parts.size(), jobs == 0 ? default_jobs() : jobs, [&](std::size_t i) {
    const auto& seq = corpus.sequences[i];
    std::map<std::string, Matrix> in_fp, in_q;
    const Matrix lf = model_fp.forward(seq, KVCacheQuant{}, [&](const std::string& id, const Matrix& x) { in_fp[id] = x; });
    const Matrix lq = model_q.forward(seq, kv, [&](const std::string& id, const Matrix& x) { in_q[id] = x; });
    SequenceStats& st = parts[i];
    st.fp = sequence_nll(lf, seq);
    st.q = sequence_nll(lq, seq);
    for (std::size_t k = 0; k < lf.size(); ++k) {
      const double d = std::fabs(static_cast<double>(lf.data()[k]) - lq.data()[k]);
      st.logit_max = std::max(st.logit_max, d);
      st.logit_sum += d;
    }
    st.logit_count = lf.size();
    for (const auto* l : model_fp.linears()) {
      const Matrix yf = l->forward(in_fp.at(l->id()));
      const Matrix yq = model_q.linear(l->id()).forward(in_q.at(l->id()));
      st.layer[l->id()] = {mean_squared_diff(yf, yq) * static_cast<double>(yf.size()), yf.size()};
    }
  });

  EvalReport r;
  NllSum fp, q;
  double logit_sum = 0.0;
  std::size_t logit_count = 0;
  std::map<std::string, std::pair<double, std::size_t>> layer;
  for (const auto& p : parts) {
    fp.nll += p.fp.nll;
    fp.count += p.fp.count;
    q.nll += p.q.nll;
    q.count += p.q.count;
    r.logit_max_abs = std::max(r.logit_max_abs, p.logit_max);
    logit_sum += p.logit_sum;
    logit_count += p.logit_count;
    for (const auto& [id, v] : p.layer) {
      layer[id].first += v.first;
      layer[id].second += v.second;
    }
  }
  r.ppl_fp = perplexity_from_nll(fp);
  r.ppl_q = perplexity_from_nll(q);
  r.logit_mean_abs = logit_sum / static_cast<double>(logit_count);
  for (const auto& [id, v] : layer) r.layer_mse[id] = v.first / static_cast<double>(v.second);
  return r;
}

}  // namespace ptq
