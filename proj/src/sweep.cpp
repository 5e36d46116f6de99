#include "ptq/sweep.hpp"

#include <cstdio>
#include <sstream>

#include "ptq/error.hpp"
#include "ptq/parallel.hpp"

namespace ptq {

SweepConfig SweepConfig::from_json(const Json& j) {
  reject_unknown_keys(j, {"seeds", "model", "corpus", "eval", "weight_bits", "groups", "weight_activation"}, "sweep");
  SweepConfig c;
  // The nested pipeline parser already knows corpus and model objects.
  Json p = Json::object();
  if (j.contains("corpus")) p["corpus"] = j.at("corpus");
  if (j.contains("eval")) p["eval"] = j.at("eval");
  if (j.contains("model")) {
    if (!j.at("model").is_object()) throw ConfigError("sweep.model must be an object");
    Json m = j.at("model");
    c.model = model_config_from_json(m);
  }
  const PipelineConfig pc = PipelineConfig::from_json(p);
  if (j.contains("corpus")) c.corpus = pc.corpus;
  if (j.contains("eval")) c.eval = pc.eval;
  try {
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("weight_bits")) c.weight_bits = j.at("weight_bits").get<std::vector<int>>();
    if (j.contains("groups")) c.groups = j.at("groups").get<std::vector<std::size_t>>();
    if (j.contains("weight_activation")) c.weight_activation = j.at("weight_activation").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep: ") + e.what());
  }
  if (c.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  for (int b : c.weight_bits)
    if (!supported_bits(b)) throw ConfigError("sweep.weight_bits: unsupported bits " + std::to_string(b));
  return c;
}

Json SweepConfig::to_json() const {
  Json j;
  j["seeds"] = seeds;
  j["model"] = ptq::to_json(model);
  PipelineConfig pc;
  pc.corpus = corpus;
  pc.eval = eval;
  const Json pj = pc.to_json();
  j["corpus"] = pj.at("corpus");
  j["eval"] = pj.at("eval");
  j["weight_bits"] = weight_bits;
  j["groups"] = groups;
  j["weight_activation"] = weight_activation;
  return j;
}

namespace {

struct CellSpec {
  SweepCell cell;
  PipelineConfig cfg;
};

SweepCell make_cell(std::string family, std::uint64_t seed, int w_bits, bool w_sym, std::string w_gran, int a_bits,
                    bool a_sym, std::string a_gran) {
  SweepCell c;
  c.family = std::move(family);
  c.seed = seed;
  c.w_bits = w_bits;
  c.w_sym = w_sym;
  c.w_gran = std::move(w_gran);
  c.a_bits = a_bits;
  c.a_sym = a_sym;
  c.a_gran = std::move(a_gran);
  return c;
}

std::vector<CellSpec> grid(const SweepConfig& sc, std::uint64_t seed) {
  std::vector<CellSpec> out;
  for (int bits : sc.weight_bits) {
    for (bool sym : {false, true}) {
      for (std::size_t g : sc.groups) {
        CellSpec c;
        c.cell = make_cell("weight_only", seed, bits, sym, g == 0 ? "ch" : "g" + std::to_string(g), 16, false, "-");
        c.cfg.w_bits = bits;
        c.cfg.w.bits = bits;
        c.cfg.w.symmetric = sym;
        c.cfg.w.granularity = g == 0 ? Granularity::per_channel : Granularity::per_group;
        c.cfg.w.group_size = g;
        out.push_back(std::move(c));
      }
    }
  }
  if (sc.weight_activation) {
    for (bool wsym : {false, true}) {
      for (bool asym_flag : {false, true}) {
        for (const char* mode : {"tk", "ts", "sts"}) {
          CellSpec c;
          c.cell = make_cell("weight_activation", seed, 4, wsym, "ch", 4, asym_flag, mode);
          c.cfg.w_bits = 4;
          c.cfg.a_bits = 4;
          c.cfg.w = default_weight_spec(4, false);
          c.cfg.w.symmetric = wsym;
          c.cfg.a = default_activation_spec(4);
          c.cfg.a.symmetric = asym_flag;
          if (std::string(mode) != "tk") {
            c.cfg.a.granularity = Granularity::per_tensor;
            c.cfg.a.dynamic = std::string(mode) == "ts";
          }
          out.push_back(std::move(c));
        }
      }
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' ? ' ' : c);
  }
  return out + "\"";
}

}  // namespace

std::vector<SweepCell> run_sweep(const SweepConfig& sc, std::size_t jobs) {
  if (jobs == 0) jobs = default_jobs();
  std::vector<SweepCell> cells;
  for (std::uint64_t seed : sc.seeds) {
    ModelConfig mc = sc.model;
    mc.seed = seed;
    const TinyDecoder model = init_model(mc);
    PipelineConfig base;
    base.seed = seed;
    base.corpus = sc.corpus;
    base.eval = sc.eval;
    base.model = mc;
    base.resolve();
    const CalibCorpus calib = build_corpus(base.corpus, model);
    const CalibCorpus eval = build_corpus(base.eval, model);
    const auto records = calibration_records(model, calib, jobs);
    auto specs = grid(sc, seed);
    std::vector<SweepCell> seed_cells(specs.size());
    // Cells run in parallel; each writes only its own slot so the order is fixed.
    parallel_for(specs.size(), jobs, [&](std::size_t i) {
      SweepCell cell = specs[i].cell;
      try {
        PipelineConfig cfg = base;
        cfg.w_bits = specs[i].cfg.w_bits;
        cfg.a_bits = specs[i].cfg.a_bits;
        cfg.w = specs[i].cfg.w;
        cfg.a = specs[i].cfg.a;
        cfg.resolve();
        const PipelineResult r = run_recipe_records(cfg, model, records, eval, 1);
        cell.ppl_fp = r.report.ppl_fp;
        cell.ppl_q = r.report.ppl_q;
        cell.calib_mse = r.report.total_calib_layer_mse();
      } catch (const NumericalError& e) {
        cell.status = "numerical_error";
        cell.error = e.what();
      } catch (const Error& e) {
        cell.status = "error";
        cell.error = e.what();
      }
      seed_cells[i] = std::move(cell);
    });
    cells.insert(cells.end(), seed_cells.begin(), seed_cells.end());
  }
  return cells;
}

const char* sweep_csv_header() {
  return "family,seed,w_bits,w_sym,w_gran,a_bits,a_sym,a_gran,status,ppl_fp,ppl_q,calib_mse,error";
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << sweep_csv_header() << "\n";
  for (const auto& c : cells) {
    const bool ok = c.status == "ok";
    os << c.family << ',' << c.seed << ',' << c.w_bits << ',' << (c.w_sym ? "sym" : "asym") << ',' << c.w_gran << ','
       << c.a_bits << ',' << (c.a_bits == 16 ? "-" : (c.a_sym ? "sym" : "asym")) << ',' << c.a_gran << ','
       << c.status << ',' << (ok ? fmt(c.ppl_fp) : "nan") << ',' << (ok ? fmt(c.ppl_q) : "nan") << ','
       << (ok ? fmt(c.calib_mse) : "nan") << ',' << csv_escape(c.error) << "\n";
  }
  return os.str();
}

}  // namespace ptq
