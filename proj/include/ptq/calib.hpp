#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ptq/layer_record.hpp"
#include "ptq/model.hpp"
#include "ptq/quant.hpp"

namespace ptq {

// Byte-level token sequences (ids 0-255), all of length seq_len.
struct CalibCorpus {
  std::string name;
  std::vector<std::vector<int>> sequences;
  std::size_t n_samples = 0;
  std::size_t seq_len = 0;

  // ShapeError if a sequence has the wrong length or an id >= vocab.
  void validate(std::size_t vocab = 256) const;
};

// Start offsets of n windows of length len in a buffer of `size` bytes,
// drawn as Rng(seed).uniform_int(size - len + 1) in order.
std::vector<std::size_t> sample_offsets(std::size_t size, std::size_t n, std::size_t len, std::uint64_t seed);

CalibCorpus corpus_from_bytes(const std::string& name, const std::string& bytes, std::size_t n_samples,
                              std::size_t seq_len, std::uint64_t seed);

// DataError if the file is unreadable or shorter than seq_len.
CalibCorpus load_corpus(const std::filesystem::path& path, std::size_t n_samples, std::size_t seq_len,
                        std::uint64_t seed);

// Sequences drawn from the model itself at temperature 1. The first token of
// each sequence is uniform over the vocabulary.
CalibCorpus sample_corpus(const TinyDecoder& model, std::size_t n_samples, std::size_t seq_len, std::uint64_t seed);

// Runs every sequence through the model (full-precision KV) and records the
// input of each Linear, one activation matrix per sequence. Hessians are not
// accumulated here.
std::map<std::string, LayerRecord> capture_activations(const TinyDecoder& model, const CalibCorpus& corpus,
                                                       std::size_t jobs = 1);

// Writes <dir>/activations.bin (little-endian f32) and <dir>/activations.json,
// an array of {layer_id, batch, tokens, features, offset} with byte offsets.
void dump_activations(const std::map<std::string, LayerRecord>& records, const std::filesystem::path& dir);

}  // namespace ptq
