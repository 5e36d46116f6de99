#include "ptq/json_io.hpp"

#include <algorithm>
#include <vector>

#include "ptq/error.hpp"

namespace ptq {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  std::vector<std::string> unknown;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
      unknown.push_back(it.key());
    }
  }
  if (unknown.empty()) return;
  std::string msg = where + ": unknown key(s)";
  for (const auto& k : unknown) msg += " '" + k + "'";
  throw ConfigError(msg);
}

Json to_json(const QuantSpec& s) {
  Json j;
  j["bits"] = s.bits;
  j["sym"] = s.symmetric;
  j["gran"] = to_string(s.granularity);
  j["group"] = s.group_size;
  j["dynamic"] = s.dynamic;
  return j;
}

QuantSpec quant_spec_from_json(const Json& j, QuantSpec base, const std::string& where) {
  reject_unknown_keys(j, {"bits", "sym", "gran", "group", "dynamic"}, where);
  try {
    if (j.contains("bits")) base.bits = j.at("bits").get<int>();
    if (j.contains("sym")) base.symmetric = j.at("sym").get<bool>();
    if (j.contains("gran")) base.granularity = parse_granularity(j.at("gran").get<std::string>());
    if (j.contains("group")) base.group_size = j.at("group").get<std::size_t>();
    if (j.contains("dynamic")) base.dynamic = j.at("dynamic").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (base.granularity == Granularity::per_token) base.dynamic = true;
  return base;
}

Json to_json(const GroupParams& p) {
  return Json{{"delta", p.delta}, {"zero_point", p.zero_point}, {"lower", p.lower}, {"upper", p.upper}};
}

GroupParams group_params_from_json(const Json& j) {
  GroupParams p;
  p.delta = j.at("delta").get<double>();
  p.zero_point = j.at("zero_point").get<std::int32_t>();
  p.lower = j.at("lower").get<float>();
  p.upper = j.at("upper").get<float>();
  return p;
}

Json to_json(const ModelConfig& c) {
  return Json{{"d_model", c.d_model}, {"n_heads", c.n_heads}, {"n_blocks", c.n_blocks}, {"d_ffn", c.d_ffn},
              {"vocab", c.vocab},     {"max_seq", c.max_seq}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"d_model", "n_heads", "n_blocks", "d_ffn", "vocab", "max_seq", "seed"}, "model");
  ModelConfig c;
  try {
    if (j.contains("d_model")) c.d_model = j.at("d_model").get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<std::size_t>();
    if (j.contains("n_blocks")) c.n_blocks = j.at("n_blocks").get<std::size_t>();
    if (j.contains("d_ffn")) c.d_ffn = j.at("d_ffn").get<std::size_t>();
    if (j.contains("vocab")) c.vocab = j.at("vocab").get<std::size_t>();
    if (j.contains("max_seq")) c.max_seq = j.at("max_seq").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  c.validate();
  return c;
}

Json to_json(const KVCacheQuant& kv) { return Json{{"bits", kv.bits}, {"group", kv.group_size}}; }

}  // namespace ptq
