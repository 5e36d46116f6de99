#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "ptq/calib.hpp"
#include "ptq/error.hpp"

using namespace ptq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ptq_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_bytes(const fs::path& dir, std::size_t n) {
  std::string bytes(n, '\0');
  for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<char>((i * 37 + 11) % 256);
  const fs::path p = dir / "corpus.bin";
  std::ofstream(p, std::ios::binary) << bytes;
  return p;
}

// SplitMix64 counter stream and multiply-shift range reduction, written out
// separately from the library's generator.
std::vector<std::size_t> oracle_offsets(std::size_t size, std::size_t n, std::size_t len, std::uint64_t seed) {
  auto mix = [](std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  const std::uint64_t golden = 0x9E3779B97F4A7C15ULL;
  const std::uint64_t key = mix(seed + golden);
  std::vector<std::size_t> out;
  for (std::uint64_t i = 1; i <= n; ++i) {
    const std::uint64_t r = mix(key + i * golden);
    const std::uint64_t span = size - len + 1;
    out.push_back(static_cast<std::size_t>((static_cast<unsigned __int128>(r) * span) >> 64));
  }
  return out;
}

TinyDecoder small_model(std::size_t blocks = 1, std::uint64_t seed = 3) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_blocks = blocks;
  c.d_ffn = 32;
  c.max_seq = 32;
  c.seed = seed;
  return init_model(c);
}

}  // namespace

TEST_CASE("load_corpus is deterministic and byte-level") {
  const fs::path dir = temp_dir("calib_load");
  const fs::path f = write_bytes(dir, 1024);
  const CalibCorpus a = load_corpus(f, 2, 16, 5), b = load_corpus(f, 2, 16, 5);
  REQUIRE(a.sequences.size() == 2);
  CHECK(a.sequences == b.sequences);
  const auto offs = sample_offsets(1024, 2, 16, 5);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = 0; t < 16; ++t) CHECK(a.sequences[s][t] == static_cast<int>(((offs[s] + t) * 37 + 11) % 256));
}

TEST_CASE("the usual 128 x 512 request is accepted as given") {
  const fs::path dir = temp_dir("calib_big");
  const CalibCorpus c = load_corpus(write_bytes(dir, 4096), 128, 512, 0);
  CHECK(c.n_samples == 128);
  CHECK(c.seq_len == 512);
  CHECK(c.sequences.size() == 128);
  for (const auto& s : c.sequences) CHECK(s.size() == 512);
}

TEST_CASE("offsets match a separate sampler") {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL, 123456789ULL}) {
    CHECK(sample_offsets(5000, 20, 64, seed) == oracle_offsets(5000, 20, 64, seed));
  }
}

TEST_CASE("short corpora are data errors") {
  const fs::path dir = temp_dir("calib_short");
  CHECK_THROWS_AS(load_corpus(write_bytes(dir, 10), 1, 16, 0), DataError);
  CHECK_THROWS_AS(load_corpus(dir / "missing.bin", 1, 16, 0), DataError);
}

TEST_CASE("capture shapes for a one-block model") {
  const TinyDecoder m = small_model();
  CalibCorpus c;
  c.name = "one";
  c.seq_len = 8;
  c.n_samples = 1;
  c.sequences = {{1, 2, 3, 4, 5, 6, 7, 8}};
  const auto rec = capture_activations(m, c);
  CHECK(rec.size() == 7);
  for (const auto& [id, r] : rec) {
    REQUIRE(r.activations.size() == 1);
    CHECK(r.activations[0].rows() == 8);
    CHECK(r.activations[0].cols() == r.weight.cols());
  }
  CHECK(rec.at("blk0.ffn.down").activations[0].cols() == 32);
}

TEST_CASE("identical sequences give identical captures") {
  const TinyDecoder m = small_model(2);
  CalibCorpus c;
  c.seq_len = 6;
  c.n_samples = 2;
  c.sequences = {{9, 8, 7, 6, 5, 4}, {9, 8, 7, 6, 5, 4}};
  const auto rec = capture_activations(m, c, 2);
  CHECK(rec.size() == 14);
  for (const auto& [id, r] : rec) CHECK(r.activations[0] == r.activations[1]);
}

TEST_CASE("q input equals the normed embedding computed by hand") {
  const TinyDecoder m = small_model();
  const std::vector<int> seq{4, 200, 17, 17, 90};
  CalibCorpus c;
  c.seq_len = seq.size();
  c.n_samples = 1;
  c.sequences = {seq};
  const auto rec = capture_activations(m, c);
  Matrix h(seq.size(), 16);
  for (std::size_t t = 0; t < seq.size(); ++t)
    for (std::size_t j = 0; j < 16; ++j) h(t, j) = m.embedding()(seq[t], j) + m.positions()(t, j);
  const auto& scale = m.blocks()[0].norm1;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    double ss = 0;
    for (std::size_t j = 0; j < 16; ++j) ss += static_cast<double>(h(t, j)) * h(t, j);
    const double inv = 1.0 / std::sqrt(ss / 16 + 1e-5);
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(rec.at("blk0.attn.q").activations[0](t, j) == doctest::Approx(h(t, j) * inv * scale[j]).epsilon(1e-5));
    }
  }
  CHECK(rec.at("blk0.attn.k").activations[0] == rec.at("blk0.attn.q").activations[0]);
  CHECK(rec.at("blk0.ffn.up").activations[0] == rec.at("blk0.ffn.gate").activations[0]);
}

TEST_CASE("hessian hand examples") {
  LayerRecord r;
  r.weight = Matrix(1, 3);
  r.activations = {Matrix::identity(3)};
  const auto h = accumulate_hessian(r).hessian;
  REQUIRE(h);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK((*h)(i, j) == doctest::Approx(i == j ? 2.0 / 3.0 : 0.0));
  LayerRecord one;
  one.weight = Matrix(1, 2);
  one.activations = {Matrix{{1, 2}}};
  CHECK(*accumulate_hessian(one).hessian == Matrix{{2, 4}, {4, 8}});
  LayerRecord empty;
  empty.weight = Matrix(1, 2);
  CHECK_THROWS_AS(accumulate_hessian(empty), StateError);
}

TEST_CASE("hessian matches a double loop, is PSD, and ignores batch order") {
  Rng rng(31);
  LayerRecord r;
  r.weight = Matrix(2, 8);
  r.activations = {fixtures::gaussian(rng, 32, 8)};
  const Matrix h = *accumulate_hessian(r).hessian;
  const Matrix& x = r.activations[0];
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < 32; ++t) s += static_cast<double>(x(t, i)) * x(t, j);
      CHECK(h(i, j) == doctest::Approx(2.0 * s / 32).epsilon(1e-5));
      CHECK(h(i, j) == h(j, i));
    }
  for (int k = 0; k < 100; ++k) {
    const Matrix v = fixtures::gaussian(rng, 1, 8);
    double q = 0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) q += static_cast<double>(v(0, i)) * h(i, j) * v(0, j);
    CHECK(q >= -1e-6);
  }
  LayerRecord a, b;
  a.weight = b.weight = Matrix(2, 8);
  const Matrix x1 = fixtures::gaussian(rng, 16, 8), x2 = fixtures::gaussian(rng, 16, 8);
  a.activations = {x1, x2};
  b.activations = {x2, x1};
  CHECK(max_abs_diff(*accumulate_hessian(a).hessian, *accumulate_hessian(b).hessian) <= 1e-6);
}

TEST_CASE("activation dump layout") {
  const TinyDecoder m = small_model();
  CalibCorpus c;
  c.seq_len = 4;
  c.n_samples = 2;
  c.sequences = {{1, 2, 3, 4}, {5, 6, 7, 8}};
  const auto rec = capture_activations(m, c);
  const fs::path dir = temp_dir("calib_dump");
  dump_activations(rec, dir);
  std::ifstream idx(dir / "activations.json");
  const auto index = nlohmann::json::parse(idx);
  CHECK(index.size() == 14);
  std::ifstream blob(dir / "activations.bin", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  for (const auto& e : index) {
    const Matrix& x = rec.at(e["layer_id"].get<std::string>()).activations[e["batch"].get<std::size_t>()];
    CHECK(e["tokens"].get<std::size_t>() == x.rows());
    CHECK(e["features"].get<std::size_t>() == x.cols());
    float first;
    std::memcpy(&first, bytes.data() + e["offset"].get<std::size_t>(), 4);
    CHECK(first == x(0, 0));
  }
}

TEST_CASE("model samples are reproducible and in vocabulary") {
  const TinyDecoder m = small_model();
  const CalibCorpus a = sample_corpus(m, 3, 12, 4), b = sample_corpus(m, 3, 12, 4);
  CHECK(a.sequences == b.sequences);
  CHECK_NOTHROW(a.validate(256));
  CHECK(sample_corpus(m, 3, 12, 5).sequences != a.sequences);
}
