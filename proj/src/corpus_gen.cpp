#include "ptq/corpus_gen.hpp"

#include <array>

#include "ptq/error.hpp"
#include "ptq/rng.hpp"

namespace ptq {

std::string to_string(CorpusDomain d) {
  switch (d) {
    case CorpusDomain::prose:
      return "prose";
    case CorpusDomain::arith:
      return "arith";
    case CorpusDomain::code:
      return "code";
  }
  return "?";
}

CorpusDomain parse_corpus_domain(const std::string& s) {
  if (s == "prose") return CorpusDomain::prose;
  if (s == "arith") return CorpusDomain::arith;
  if (s == "code") return CorpusDomain::code;
  throw ConfigError("unknown corpus domain '" + s + "' (expected prose, arith or code)");
}

const std::vector<CorpusDomain>& all_corpus_domains() {
  static const std::vector<CorpusDomain> d{CorpusDomain::prose, CorpusDomain::arith, CorpusDomain::code};
  return d;
}

namespace {

template <std::size_t N>
const char* pick(Rng& rng, const std::array<const char*, N>& words) {
  return words[rng.uniform_int(N)];
}

const std::array<const char*, 24> kNouns{"river", "garden", "window", "letter", "village", "morning",
                                         "teacher", "market", "forest", "story",   "harbor",  "lamp",
                                         "winter", "road",   "friend", "bridge",  "music",   "kitchen",
                                         "island", "train",  "field",  "mother",  "city",    "evening"};
const std::array<const char*, 16> kVerbs{"watched", "carried", "found",   "remembered", "opened", "crossed",
                                         "painted", "followed", "heard",  "described",  "left",   "visited",
                                         "warmed",  "kept",     "lost",   "greeted"};
const std::array<const char*, 16> kAdjs{"quiet", "old",    "bright", "narrow", "gentle", "distant",
                                        "small", "golden", "cold",   "busy",   "empty",  "green",
                                        "late",  "soft",   "long",   "early"};
const std::array<const char*, 8> kLinks{"and then", "while", "because", "after", "before", "so", "but", "until"};

void prose_sentence(Rng& rng, std::string& out) {
  std::string s = std::string("the ") + pick(rng, kAdjs) + " " + pick(rng, kNouns) + " " + pick(rng, kVerbs) +
                  " the " + pick(rng, kNouns);
  if (rng.uniform() < 0.5) {
    s += std::string(" ") + pick(rng, kLinks) + " the " + pick(rng, kNouns) + " " + pick(rng, kVerbs) + " a " +
         pick(rng, kAdjs) + " " + pick(rng, kNouns);
  }
  s[0] = 'T';
  out += s + (rng.uniform() < 0.15 ? ".\n" : ". ");
}

void arith_line(Rng& rng, std::string& out) {
  const long a = static_cast<long>(rng.uniform_int(1000));
  const long b = static_cast<long>(rng.uniform_int(100));
  switch (rng.uniform_int(4)) {
    case 0:
      out += std::to_string(a) + " + " + std::to_string(b) + " = " + std::to_string(a + b) + "\n";
      break;
    case 1:
      out += std::to_string(a) + " - " + std::to_string(b) + " = " + std::to_string(a - b) + "\n";
      break;
    case 2:
      out += std::to_string(a % 100) + " * " + std::to_string(b) + " = " + std::to_string((a % 100) * b) + "\n";
      break;
    default: {
      const long d = b + 1;
      out += std::to_string(a * d) + " / " + std::to_string(d) + " = " + std::to_string(a) + "\n";
    }
  }
}

const std::array<const char*, 12> kIdents{"count", "total", "index", "value", "items", "node",
                                          "left",  "right", "size",  "buf",   "key",   "acc"};
const std::array<const char*, 5> kOps{"+", "-", "*", "//", "%"};

void code_snippet(Rng& rng, std::string& out) {
  const std::string f = std::string("fn_") + pick(rng, kIdents) + std::to_string(rng.uniform_int(50));
  const std::string a = pick(rng, kIdents), b = pick(rng, kIdents);
  out += "def " + f + "(" + a + ", " + b + "):\n";
  const auto lines = 1 + rng.uniform_int(3);
  for (std::uint64_t i = 0; i < lines; ++i) {
    switch (rng.uniform_int(3)) {
      case 0:
        out += "    " + a + " = " + a + " " + pick(rng, kOps) + " " + std::to_string(rng.uniform_int(10)) + "\n";
        break;
      case 1:
        out += "    if " + a + " > " + b + ":\n        " + b + " += 1\n";
        break;
      default:
        out += "    for i in range(" + b + "):\n        " + a + " += i\n";
    }
  }
  out += "    return " + a + " " + pick(rng, kOps) + " " + b + "\n\n";
}

}  // namespace

std::string generate_corpus(CorpusDomain domain, std::size_t bytes, std::uint64_t seed) {
  Rng rng(seed);
  std::string out;
  out.reserve(bytes + 256);
  while (out.size() < bytes) {
    switch (domain) {
      case CorpusDomain::prose:
        prose_sentence(rng, out);
        break;
      case CorpusDomain::arith:
        arith_line(rng, out);
        break;
      case CorpusDomain::code:
        code_snippet(rng, out);
        break;
    }
  }
  out.resize(bytes);
  return out;
}

}  // namespace ptq
