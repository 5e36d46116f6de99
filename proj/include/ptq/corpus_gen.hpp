#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ptq {

// Toy text domains used as calibration / evaluation corpora.
enum class CorpusDomain { prose, arith, code };

std::string to_string(CorpusDomain d);
CorpusDomain parse_corpus_domain(const std::string& s);
const std::vector<CorpusDomain>& all_corpus_domains();

// Deterministic ASCII text of exactly `bytes` bytes.
std::string generate_corpus(CorpusDomain domain, std::size_t bytes, std::uint64_t seed);

}  // namespace ptq
