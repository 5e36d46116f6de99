#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ptq/calib.hpp"
#include "ptq/container.hpp"
#include "ptq/corpus_gen.hpp"
#include "ptq/error.hpp"
#include "ptq/parallel.hpp"
#include "ptq/pipeline.hpp"
#include "ptq/sweep.hpp"

namespace fs = std::filesystem;

namespace ptq::cli {
namespace {

constexpr int kOk = 0;
constexpr int kOther = 1;
constexpr int kConfig = 2;
constexpr int kNumerical = 3;

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
  bool quiet = false;
  // per command
  std::string model;
  bool dump_activations = false;
  std::string domain = "prose";
  std::size_t bytes = 65536;
};

void log(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << "ptq: " << msg << "\n";
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

Json load_config(const Options& o, bool required) {
  if (o.config.empty()) {
    if (required) throw ConfigError("--config is required for this command");
    return Json::object();
  }
  Json j = read_json_file(o.config);
  if (!j.is_object()) throw ConfigError("config root must be an object");
  // a manifest written by an earlier run replays its config
  if (j.size() == 2 && j.contains("command") && j.contains("config") && j.at("config").is_object()) {
    return j.at("config");
  }
  return j;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed for " + p.string());
}

void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

void write_manifest(const fs::path& dir, const std::string& command, const Json& config) {
  Json m;
  m["command"] = command;
  m["config"] = config;
  write_json(dir / "manifest.json", m);
}

std::size_t jobs_of(const Options& o) { return o.jobs == 0 ? default_jobs() : o.jobs; }

PipelineConfig pipeline_config(const Options& o, bool required) {
  Json j = load_config(o, required);
  if (o.seed) j["seed"] = *o.seed;
  if (!o.model.empty()) j["model"] = o.model;
  return PipelineConfig::from_json(j);
}

int cmd_quantize(const Options& o) {
  const PipelineConfig cfg = pipeline_config(o, true);
  const fs::path out = o.out;
  fs::create_directories(out);
  write_manifest(out, "quantize", cfg.to_json());

  const std::size_t jobs = jobs_of(o);
  const TinyDecoder model = build_model(cfg);
  const CalibCorpus calib = build_corpus(cfg.corpus, model);
  const CalibCorpus eval = build_corpus(cfg.eval, model);
  log(o, "calibrating '" + (cfg.recipe.empty() ? std::string("naive") : cfg.recipe) + "' on " +
             std::to_string(calib.n_samples) + "x" + std::to_string(calib.seq_len) + " tokens");
  if (o.dump_activations) {
    dump_activations(capture_activations(model, calib, jobs), out / "activations");
  }
  const PipelineResult r = run_recipe(cfg, model, calib, eval, jobs);
  save_model(r.model_q, out / "model.tmw");
  write_json(out / "report.json", r.report.to_json());
  write_json(out / "timing.json", r.timing);
  log(o, "ppl fp " + std::to_string(r.report.ppl_fp) + " -> q " + std::to_string(r.report.ppl_q));
  return kOk;
}

// Compares a quantized model file (--model) against the fp model rebuilt from the config.
int cmd_eval(const Options& o) {
  Json j = load_config(o, false);
  if (o.seed) j["seed"] = *o.seed;
  const PipelineConfig cfg = PipelineConfig::from_json(j);
  if (o.model.empty()) throw ConfigError("eval needs --model <file.tmw>");
  const fs::path out = o.out;
  fs::create_directories(out);
  Json manifest = cfg.to_json();
  manifest["eval_model"] = o.model;
  write_manifest(out, "eval", manifest);

  const TinyDecoder fp = build_model(cfg);
  const TinyDecoder q = load_model(o.model);
  const CalibCorpus eval = build_corpus(cfg.eval, fp);
  EvalReport report = compare(fp, q, eval, cfg.kv, jobs_of(o));
  report.recipe = cfg.recipe;
  report.bits = describe_bits(cfg.w_bits, cfg.a_bits, cfg.w.granularity == Granularity::per_group ? cfg.w.group_size : 0);
  write_json(out / "report.json", report.to_json());
  log(o, "ppl fp " + std::to_string(report.ppl_fp) + " q " + std::to_string(report.ppl_q));
  return kOk;
}

int cmd_sweep(const Options& o) {
  Json j = load_config(o, false);
  if (o.seed) j["seeds"] = {*o.seed};
  const SweepConfig cfg = SweepConfig::from_json(j);
  const fs::path out = o.out;
  fs::create_directories(out);
  write_manifest(out, "sweep", cfg.to_json());
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = run_sweep(cfg, jobs_of(o));
  write_text(out / "sweep.csv", sweep_csv(cells));
  Json timing;
  timing["sweep"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_json(out / "timing.json", timing);
  std::size_t failed = 0;
  for (const auto& c : cells) failed += c.status != "ok";
  log(o, std::to_string(cells.size()) + " cells, " + std::to_string(failed) + " failed");
  return kOk;
}

int cmd_export(const Options& o) {
  if (o.model.empty()) throw ConfigError("export needs --model <file.tmw>");
  const fs::path out = o.out;
  fs::create_directories(out);
  Json m;
  m["model"] = o.model;
  write_manifest(out, "export", m);
  export_quantized(load_model(o.model), out / "model.tmq");
  return kOk;
}

int cmd_gen_model(const Options& o) {
  Json j = load_config(o, false);
  ModelConfig mc;
  if (j.contains("model")) {
    reject_unknown_keys(j, {"model", "seed"}, "gen-model");
    mc = model_config_from_json(j.at("model"));
    if (!j.at("model").contains("seed") && j.contains("seed")) mc.seed = j.at("seed").get<std::uint64_t>();
  } else if (!j.empty()) {
    mc = model_config_from_json(j);
  }
  if (o.seed) mc.seed = *o.seed;
  mc.validate();
  const fs::path out = o.out;
  fs::create_directories(out);
  write_manifest(out, "gen-model", to_json(mc));
  save_model(init_model(mc), out / "model.tmw");
  return kOk;
}

int cmd_gen_corpus(const Options& o) {
  Json j = load_config(o, false);
  reject_unknown_keys(j, {"domain", "bytes", "seed"}, "gen-corpus");
  std::string domain = o.domain;
  std::size_t bytes = o.bytes;
  std::uint64_t seed = 0;
  try {
    if (j.contains("domain")) domain = j.at("domain").get<std::string>();
    if (j.contains("bytes")) bytes = j.at("bytes").get<std::size_t>();
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("gen-corpus: ") + e.what());
  }
  if (o.seed) seed = *o.seed;
  const CorpusDomain d = parse_corpus_domain(domain);
  const fs::path out = o.out;
  fs::create_directories(out);
  Json m;
  m["domain"] = to_string(d);
  m["bytes"] = bytes;
  m["seed"] = seed;
  write_manifest(out, "gen-corpus", m);
  write_text(out / ("corpus_" + to_string(d) + ".txt"), generate_corpus(d, bytes, seed));
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"post-training quantization toolkit for a tiny decoder"};
  app.require_subcommand(1);
  Options o;
  if (const char* env = std::getenv("QF_JOBS")) {
    try {
      o.jobs = std::stoul(env);
    } catch (...) {
      std::cerr << "ptq: ignoring malformed QF_JOBS='" << env << "'\n";
    }
  }

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed override");
    sub->add_option("--jobs", o.jobs, "worker threads (default QF_JOBS or hardware)");
    sub->add_flag("--quiet", o.quiet, "no progress output");
  };

  auto* quantize = app.add_subcommand("quantize", "calibrate, quantize and evaluate a model");
  common(quantize, true);
  quantize->add_flag("--dump-activations", o.dump_activations, "also write captured calibration activations");
  quantize->add_option("--model", o.model, "fp model file (.tmw) overriding the config");

  auto* eval = app.add_subcommand("eval", "compare a model file against the fp model of a config");
  common(eval, false);
  eval->add_option("--model", o.model, "model file (.tmw)")->required();

  auto* sweep = app.add_subcommand("sweep", "naive granularity sweep to CSV");
  common(sweep, false);

  auto* exp = app.add_subcommand("export", "write quantized codes and params (.tmq)");
  common(exp, false);
  exp->add_option("--model", o.model, "quantized model file (.tmw)")->required();

  auto* gen_model = app.add_subcommand("gen-model", "write a seeded fp fixture model");
  common(gen_model, false);

  auto* gen_corpus = app.add_subcommand("gen-corpus", "write a synthetic text corpus");
  common(gen_corpus, false);
  gen_corpus->add_option("--domain", o.domain, "prose | arith | code");
  gen_corpus->add_option("--bytes", o.bytes, "corpus size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*quantize) return cmd_quantize(o);
    if (*eval) return cmd_eval(o);
    if (*sweep) return cmd_sweep(o);
    if (*exp) return cmd_export(o);
    if (*gen_model) return cmd_gen_model(o);
    if (*gen_corpus) return cmd_gen_corpus(o);
  } catch (const ConfigError& e) {
    std::cerr << "ptq: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "ptq: shape error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "ptq: numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "ptq: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}

}  // namespace ptq::cli
