#pragma once

#include <string>

#include "json.hpp"
#include "ptq/model.hpp"
#include "ptq/quant.hpp"

namespace ptq {

using Json = nlohmann::ordered_json;

Json to_json(const QuantSpec& s);
// Keys: bits, sym, gran, group, dynamic. Missing keys keep the values of `base`;
// unknown keys raise ConfigError naming them.
QuantSpec quant_spec_from_json(const Json& j, QuantSpec base, const std::string& where);

Json to_json(const GroupParams& p);
GroupParams group_params_from_json(const Json& j);

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const KVCacheQuant& kv);

// ConfigError listing every key of `j` outside `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace ptq
