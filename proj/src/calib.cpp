#include "ptq/calib.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "ptq/container.hpp"
#include "ptq/error.hpp"
#include "ptq/parallel.hpp"
#include "ptq/rng.hpp"

namespace ptq {

void CalibCorpus::validate(std::size_t vocab) const {
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    if (sequences[s].size() != seq_len) {
      throw ShapeError("corpus '" + name + "': sequence " + std::to_string(s) + " has length " +
                       std::to_string(sequences[s].size()) + ", expected " + std::to_string(seq_len));
    }
    for (int id : sequences[s]) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw ShapeError("corpus '" + name + "': token id " + std::to_string(id) + " outside the vocabulary");
      }
    }
  }
}

std::vector<std::size_t> sample_offsets(std::size_t size, std::size_t n, std::size_t len, std::uint64_t seed) {
  if (len == 0) throw ConfigError("seq_len must be positive");
  if (size < len) {
    throw DataError("corpus has " + std::to_string(size) + " bytes, fewer than seq_len " + std::to_string(len));
  }
  Rng rng(seed);
  std::vector<std::size_t> out(n);
  for (auto& o : out) o = static_cast<std::size_t>(rng.uniform_int(size - len + 1));
  return out;
}

CalibCorpus corpus_from_bytes(const std::string& name, const std::string& bytes, std::size_t n_samples,
                              std::size_t seq_len, std::uint64_t seed) {
  CalibCorpus c;
  c.name = name;
  c.n_samples = n_samples;
  c.seq_len = seq_len;
  for (std::size_t off : sample_offsets(bytes.size(), n_samples, seq_len, seed)) {
    std::vector<int> seq(seq_len);
    for (std::size_t t = 0; t < seq_len; ++t) seq[t] = static_cast<unsigned char>(bytes[off + t]);
    c.sequences.push_back(std::move(seq));
  }
  return c;
}

CalibCorpus load_corpus(const std::filesystem::path& path, std::size_t n_samples, std::size_t seq_len,
                        std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read corpus file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return corpus_from_bytes(path.filename().string(), bytes, n_samples, seq_len, seed);
}

CalibCorpus sample_corpus(const TinyDecoder& model, std::size_t n_samples, std::size_t seq_len, std::uint64_t seed) {
  const ModelConfig& cfg = model.config();
  if (seq_len == 0 || seq_len > cfg.max_seq) throw ConfigError("sample length must lie in [1, max_seq]");
  CalibCorpus c;
  c.name = "model-samples";
  c.n_samples = n_samples;
  c.seq_len = seq_len;
  const Rng root(seed);
  for (std::size_t s = 0; s < n_samples; ++s) {
    Rng rng = root.split(s);
    std::vector<int> seq{static_cast<int>(rng.uniform_int(cfg.vocab))};
    DecodeState state;
    while (seq.size() < seq_len) {
      const Matrix logits = model.extend(state, std::span<const int>(&seq.back(), 1));
      const auto last = logits.row(logits.rows() - 1);
      const double mx = *std::max_element(last.begin(), last.end());
      std::vector<double> cdf(last.size());
      double z = 0.0;
      for (std::size_t v = 0; v < last.size(); ++v) cdf[v] = (z += std::exp(last[v] - mx));
      const double u = rng.uniform() * z;
      const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      seq.push_back(static_cast<int>(std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1)));
    }
    c.sequences.push_back(std::move(seq));
  }
  return c;
}

std::map<std::string, LayerRecord> capture_activations(const TinyDecoder& model, const CalibCorpus& corpus,
                                                       std::size_t jobs) {
  corpus.validate(model.config().vocab);
  const std::size_t n = corpus.sequences.size();
  std::vector<std::map<std::string, Matrix>> per_seq(n);
  parallel_for(n, jobs == 0 ? default_jobs() : jobs, [&](std::size_t s) {
    auto& dst = per_seq[s];
    model.forward(corpus.sequences[s], KVCacheQuant{}, [&](const std::string& id, const Matrix& x) { dst[id] = x; });
  });
  std::map<std::string, LayerRecord> records;
  for (const auto* l : model.linears()) {
    LayerRecord r;
    r.layer_id = l->id();
    r.weight = l->weight();
    r.activations.reserve(n);
    for (auto& m : per_seq) r.activations.push_back(std::move(m.at(l->id())));
    records.emplace(l->id(), std::move(r));
  }
  return records;
}

void dump_activations(const std::map<std::string, LayerRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream blob(dir / "activations.bin", std::ios::binary);
  if (!blob) throw DataError("cannot write " + (dir / "activations.bin").string());
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [id, rec] : records) {
    for (std::size_t b = 0; b < rec.activations.size(); ++b) {
      const Matrix& x = rec.activations[b];
      write_f32_le(blob, x.data());
      index.push_back({{"layer_id", id}, {"batch", b}, {"tokens", x.rows()}, {"features", x.cols()},
                       {"offset", offset}});
      offset += 4 * x.size();
    }
  }
  std::ofstream idx(dir / "activations.json");
  idx << index.dump(2) << "\n";
}

}  // namespace ptq
