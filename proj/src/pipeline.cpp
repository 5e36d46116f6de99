#include "ptq/pipeline.hpp"

#include <chrono>
#include <numeric>

#include "ptq/container.hpp"
#include "ptq/error.hpp"
#include "ptq/gptq.hpp"
#include "ptq/objective.hpp"
#include "ptq/parallel.hpp"

namespace ptq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_bits(int bits, const char* what) {
  if (bits != 16 && !supported_bits(bits)) {
    throw ConfigError(std::string(what) + " bits must be one of 2, 3, 4, 6, 8, 16 (got " + std::to_string(bits) + ")");
  }
}

template <typename T>
T get_as(const Json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

CorpusSource corpus_from_json(const Json& j, const std::string& where) {
  CorpusSource c;
  if (j.is_string()) {
    c.kind = CorpusSource::Kind::file;
    c.path = j.get<std::string>();
    return c;
  }
  reject_unknown_keys(j, {"path", "generate", "sample", "bytes", "n_samples", "seq_len", "text_seed", "sample_seed"},
                      where);
  const int sources = j.contains("path") + j.contains("generate") + j.contains("sample");
  if (sources > 1) throw ConfigError(where + ": give only one of path, generate, sample");
  if (j.contains("path")) {
    c.kind = CorpusSource::Kind::file;
    c.path = get_as<std::string>(j.at("path"), where + ".path");
  } else if (j.contains("sample")) {
    if (get_as<std::string>(j.at("sample"), where + ".sample") != "model") {
      throw ConfigError(where + ".sample: only \"model\" is supported");
    }
    c.kind = CorpusSource::Kind::model_samples;
  } else if (j.contains("generate")) {
    c.kind = CorpusSource::Kind::generated;
    c.domain = parse_corpus_domain(get_as<std::string>(j.at("generate"), where + ".generate"));
  }
  if (j.contains("bytes")) c.bytes = get_as<std::size_t>(j.at("bytes"), where + ".bytes");
  if (j.contains("n_samples")) c.n_samples = get_as<std::size_t>(j.at("n_samples"), where + ".n_samples");
  if (j.contains("seq_len")) c.seq_len = get_as<std::size_t>(j.at("seq_len"), where + ".seq_len");
  if (j.contains("text_seed")) c.text_seed = get_as<std::uint64_t>(j.at("text_seed"), where + ".text_seed");
  if (j.contains("sample_seed")) c.sample_seed = get_as<std::uint64_t>(j.at("sample_seed"), where + ".sample_seed");
  return c;
}

Json corpus_to_json(const CorpusSource& c) {
  Json j;
  switch (c.kind) {
    case CorpusSource::Kind::file:
      j["path"] = c.path.string();
      break;
    case CorpusSource::Kind::generated:
      j["generate"] = to_string(c.domain);
      j["bytes"] = c.bytes;
      j["text_seed"] = c.text_seed.value_or(0);
      break;
    case CorpusSource::Kind::model_samples:
      j["sample"] = "model";
      break;
  }
  j["n_samples"] = c.n_samples;
  j["seq_len"] = c.seq_len;
  j["sample_seed"] = c.sample_seed.value_or(0);
  return j;
}

bool overrides_match(const std::string& key, const std::string& id) {
  if (key == id) return true;
  return id.size() > key.size() && id.compare(id.size() - key.size(), key.size(), key) == 0 &&
         id[id.size() - key.size() - 1] == '.';
}

std::vector<std::size_t> top_columns(const std::vector<double>& scores, std::size_t k, const QuantSpec& spec) {
  if (k == 0) return {};
  const double rate = static_cast<double>(k) / static_cast<double>(scores.size());
  return build_plan(scores, rate, MixGranularity::column, MixMode::static_plan, spec).keep_columns;
}

}  // namespace

// ---------------------------------------------------------------- config

void PipelineConfig::resolve() {
  check_bits(w_bits, "weight");
  check_bits(a_bits, "activation");
  if (w_bits == 16 && a_bits != 16) throw ConfigError("activation-only quantization is not supported; set w bits");
  if (w_bits != 16) {
    if (w.bits != w_bits) throw ConfigError("weight spec bits disagree with w bits");
    w.validate();
  }
  if (a_bits != 16) {
    if (a.bits != a_bits) throw ConfigError("activation spec bits disagree with a bits");
    a.validate();
    if (!a.dynamic && a.granularity != Granularity::per_tensor) {
      throw ConfigError("static activation quantization is per-tensor only");
    }
  }
  kv.validate();
  for (const auto& [k, b] : overrides) check_bits(b, ("override '" + k + "'").c_str());
  if (!(mix.rate >= 0.0 && mix.rate <= 1.0)) throw ConfigError("mix.rate must lie in [0, 1]");
  if (mix.enabled && weight_only() && mix.mode == MixMode::dynamic_plan) {
    throw ConfigError("dynamic mixed precision applies to weight-activation quantization only");
  }
  if (!(damp_ratio > 0.0)) throw ConfigError("damp_ratio must be positive");
  if (learn.step < 0.0) throw ConfigError("learn.step must be non-negative");
  const Recipe r = Recipe::parse(recipe, force);
  if (!r.empty() && !quantizes_weights()) throw ConfigError("recipe '" + recipe + "' needs quantized weights");
  recipe = r.render();
  if (!corpus.text_seed) corpus.text_seed = seed;
  if (!corpus.sample_seed) corpus.sample_seed = seed + 1;
  if (!eval.text_seed) eval.text_seed = seed + 7919;
  if (!eval.sample_seed) eval.sample_seed = seed + 2;
  model.validate();
}

PipelineConfig PipelineConfig::from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"recipe", "w", "a", "kv", "mix", "overrides", "corpus", "eval", "seed", "model", "damp_ratio",
                       "clip_objective", "learn", "force"},
                      "config");
  PipelineConfig c;
  if (j.contains("seed")) c.seed = get_as<std::uint64_t>(j.at("seed"), "seed");
  if (j.contains("recipe")) c.recipe = get_as<std::string>(j.at("recipe"), "recipe");
  if (j.contains("force")) c.force = get_as<bool>(j.at("force"), "force");

  auto bits_of = [](const Json& v, const char* where) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_object() && v.contains("bits")) return get_as<int>(v.at("bits"), std::string(where) + ".bits");
    if (v.is_object()) return 16;
    throw ConfigError(std::string(where) + ": expected bits or an object");
  };
  if (j.contains("w")) c.w_bits = bits_of(j.at("w"), "w");
  if (j.contains("a")) c.a_bits = bits_of(j.at("a"), "a");
  check_bits(c.w_bits, "weight");
  check_bits(c.a_bits, "activation");
  if (c.w_bits != 16) {
    c.w = default_weight_spec(c.w_bits, c.a_bits == 16);
    if (j.contains("w") && j.at("w").is_object()) c.w = quant_spec_from_json(j.at("w"), c.w, "w");
  }
  if (c.a_bits != 16) {
    c.a = default_activation_spec(c.a_bits);
    if (j.contains("a") && j.at("a").is_object()) c.a = quant_spec_from_json(j.at("a"), c.a, "a");
  }
  if (j.contains("kv")) {
    const Json& kv = j.at("kv");
    if (kv.is_number_integer()) {
      c.kv.bits = kv.get<int>();
    } else {
      reject_unknown_keys(kv, {"bits", "group"}, "kv");
      if (kv.contains("bits")) c.kv.bits = get_as<int>(kv.at("bits"), "kv.bits");
      if (kv.contains("group")) c.kv.group_size = get_as<std::size_t>(kv.at("group"), "kv.group");
    }
  }
  if (j.contains("mix")) {
    const Json& m = j.at("mix");
    reject_unknown_keys(m, {"metric", "rate", "granularity", "mode", "x"}, "mix");
    c.mix.enabled = true;
    if (m.contains("metric")) c.mix.metric = parse_mix_metric(get_as<std::string>(m.at("metric"), "mix.metric"));
    if (m.contains("rate")) c.mix.rate = get_as<double>(m.at("rate"), "mix.rate");
    if (m.contains("granularity")) {
      c.mix.granularity = parse_mix_granularity(get_as<std::string>(m.at("granularity"), "mix.granularity"));
    }
    if (m.contains("mode")) c.mix.mode = parse_mix_mode(get_as<std::string>(m.at("mode"), "mix.mode"));
    if (m.contains("x")) c.mix.x = get_as<std::size_t>(m.at("x"), "mix.x");
  }
  if (j.contains("overrides")) {
    const Json& o = j.at("overrides");
    if (!o.is_object()) throw ConfigError("overrides: expected an object of layer -> bits");
    for (auto it = o.begin(); it != o.end(); ++it) c.overrides[it.key()] = get_as<int>(it.value(), "overrides");
  }
  if (j.contains("corpus")) c.corpus = corpus_from_json(j.at("corpus"), "corpus");
  if (j.contains("eval")) {
    c.eval = corpus_from_json(j.at("eval"), "eval");
  } else {
    c.eval.kind = CorpusSource::Kind::model_samples;
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    if (m.is_string()) {
      c.model_path = m.get<std::string>();
    } else {
      c.model = model_config_from_json(m);
      if (!m.contains("seed")) c.model.seed = c.seed;
    }
  } else {
    c.model.seed = c.seed;
  }
  if (j.contains("damp_ratio")) c.damp_ratio = get_as<double>(j.at("damp_ratio"), "damp_ratio");
  if (j.contains("clip_objective")) {
    c.clip_objective = parse_clip_objective(get_as<std::string>(j.at("clip_objective"), "clip_objective"));
  }
  if (j.contains("learn")) {
    const Json& l = j.at("learn");
    reject_unknown_keys(l, {"epochs", "step"}, "learn");
    if (l.contains("epochs")) c.learn.epochs = get_as<std::size_t>(l.at("epochs"), "learn.epochs");
    if (l.contains("step")) c.learn.step = get_as<double>(l.at("step"), "learn.step");
  }
  c.resolve();
  return c;
}

Json PipelineConfig::to_json() const {
  Json j;
  j["recipe"] = recipe;
  j["w"] = w_bits == 16 ? Json{{"bits", 16}} : ptq::to_json(w);
  j["a"] = a_bits == 16 ? Json{{"bits", 16}} : ptq::to_json(a);
  j["kv"] = ptq::to_json(kv);
  if (mix.enabled) {
    Json m;
    m["metric"] = to_string(mix.metric);
    m["rate"] = mix.rate;
    m["granularity"] = to_string(mix.granularity);
    m["mode"] = to_string(mix.mode);
    if (mix.x) m["x"] = *mix.x;
    j["mix"] = m;
  }
  j["overrides"] = Json::object();
  for (const auto& [k, b] : overrides) j["overrides"][k] = b;
  j["corpus"] = corpus_to_json(corpus);
  j["eval"] = corpus_to_json(eval);
  j["seed"] = seed;
  if (model_path) {
    j["model"] = model_path->string();
  } else {
    j["model"] = ptq::to_json(model);
  }
  j["damp_ratio"] = damp_ratio;
  j["clip_objective"] = to_string(clip_objective);
  j["learn"] = Json{{"epochs", learn.epochs}, {"step", learn.step}};
  j["force"] = force;
  return j;
}

QuantSpec layer_weight_spec(const PipelineConfig& cfg, const std::string& layer_id) {
  QuantSpec s = cfg.w;
  for (const auto& [key, bits] : cfg.overrides) {
    if (overrides_match(key, layer_id)) s.bits = bits;
  }
  return s;
}

// ---------------------------------------------------------------- per layer

LayerOutcome quantize_record(const LayerRecord& record, const Recipe& recipe, const PipelineConfig& cfg,
                             StepTimes* times) {
  LayerOutcome out;
  out.layer_id = record.layer_id;
  out.w_spec = layer_weight_spec(cfg, record.layer_id);
  if (!cfg.quantizes_weights() || out.w_spec.bits == 16) return out;
  const QuantSpec& spec_w = out.w_spec;
  const std::optional<QuantSpec> spec_a = cfg.weight_only() ? std::nullopt : std::optional<QuantSpec>(cfg.a);
  StepTimes local;
  auto t0 = Clock::now();

  TransformScale ts;
  LayerRecord rec_t = record;
  if (recipe.transform) {
    const TransformStep& step = *recipe.transform;
    if (step.kind == TransformKind::TL) {
      switch (step.init) {
        case ScaleInit::ones:
          ts.s.assign(record.weight.cols(), 1.0f);
          ts.strategy = TransformKind::TL;
          ts.init = ScaleInit::ones;
          break;
        case ScaleInit::TR:
          ts = compute_scale(record, {TransformKind::TR, step.gamma}, spec_w, spec_a);
          break;
        case ScaleInit::TS_v1:
          ts = compute_scale(record, {TransformKind::TS_v1, 0.5f}, spec_w, spec_a);
          break;
      }
    } else {
      ts = compute_scale(record, {step.kind, step.gamma}, spec_w, spec_a);
    }
    rec_t = apply_transform(record, ts.s);
    local["transform"] += seconds_since(t0);
  }

  std::optional<InputQuantizer> aq;
  if (spec_a) aq.emplace(*spec_a, rec_t.activations);

  std::optional<ClipBounds> bounds;
  t0 = Clock::now();
  if (recipe.clip) {
    ClipKind kind = recipe.clip->kind;
    if (kind == ClipKind::CL) kind = recipe.clip->init == ClipInit::CS_asym ? ClipKind::CS_asym : ClipKind::CM;
    bounds = compute_bounds(rec_t, kind, spec_w, cfg.clip_objective, aq ? &*aq : nullptr);
    local["clip"] += seconds_since(t0);
  }

  if (recipe.transform && recipe.transform->kind == TransformKind::TL) {
    t0 = Clock::now();
    ts = learn_scale(record, ts, spec_w, spec_a, cfg.learn.epochs, cfg.learn.step, bounds ? &*bounds : nullptr);
    rec_t = apply_transform(record, ts.s);
    if (spec_a) aq.emplace(*spec_a, rec_t.activations);
    if (bounds) bounds = bounds_from_ratios(rec_t.weight, *bounds, spec_w);
    local["transform"] += seconds_since(t0);
  }

  if (recipe.clip && recipe.clip->kind == ClipKind::CL) {
    t0 = Clock::now();
    bounds = learn_bounds(rec_t, *bounds, spec_w, cfg.learn.epochs, cfg.learn.step, cfg.clip_objective,
                          aq ? &*aq : nullptr);
    local["clip"] += seconds_since(t0);
  }

  LayerArtifacts& art = out.artifacts;
  if (recipe.transform) {
    art.scale = ts.s;
    out.gamma = ts.gamma;
    out.transform_objective = ScaleObjective(record, spec_w, spec_a)(ts.s);
  }
  if (bounds) {
    out.clip_objective = clip_objective_value(rec_t, *bounds, spec_w, cfg.clip_objective, aq ? &*aq : nullptr);
    const auto stats = group_stats(rec_t.weight, bounds->layout);
    for (std::size_t g = 0; g < stats.size(); ++g) {
      if (bounds->alpha[g] != stats[g].min || bounds->beta[g] != stats[g].max) ++out.clipped_groups;
    }
  }

  if (recipe.reconstruct) {
    t0 = Clock::now();
    if (!rec_t.hessian) rec_t = accumulate_hessian(std::move(rec_t));
    ReconstructionConfig rc;
    rc.damp_ratio = cfg.damp_ratio;
    rc.spec = spec_w;
    art.reconstruction = reconstruct(rec_t, rc, bounds ? &*bounds : nullptr).codes;
    local["reconstruct"] += seconds_since(t0);
  } else {
    art.bounds = bounds;
  }

  if (cfg.mix.enabled) {
    t0 = Clock::now();
    if (!rec_t.hessian) rec_t = accumulate_hessian(std::move(rec_t));
    const std::size_t n = rec_t.weight.cols();
    if (cfg.weight_only()) {
      const bool element = cfg.mix.granularity == MixGranularity::element;
      const auto scores = element ? score_elements(rec_t, cfg.mix.metric, spec_w)
                                  : score_columns(rec_t, cfg.mix.metric, spec_w);
      MixedPrecisionPlan plan = build_plan(scores, cfg.mix.rate, cfg.mix.granularity, MixMode::static_plan, spec_w, n);
      plan.metric = cfg.mix.metric;
      plan.layer_overrides = cfg.overrides;
      art.plan = std::move(plan);
    } else {
      const std::size_t x = cfg.mix.x.value_or(n / 8);
      if (x > n) throw ConfigError(record.layer_id + ": mix.x exceeds the input width");
      if (cfg.mix.mode == MixMode::dynamic_plan) {
        art.dynamic_outliers = x;
      } else {
        art.act_keep = top_columns(score_columns(rec_t, MixMetric::magnitude, spec_w), x, spec_w);
      }
    }
    local["mixed_precision"] += seconds_since(t0);
  }
  if (aq) art.act_params = aq->static_params();
  if (times) {
    for (const auto& [k, v] : local) (*times)[k] += v;
  }
  return out;
}

// ---------------------------------------------------------------- runs

TinyDecoder build_model(const PipelineConfig& cfg) {
  if (cfg.model_path) return load_model(*cfg.model_path);
  return init_model(cfg.model);
}

CalibCorpus build_corpus(const CorpusSource& src, const TinyDecoder& model_fp) {
  const std::uint64_t text_seed = src.text_seed.value_or(0), sample_seed = src.sample_seed.value_or(0);
  switch (src.kind) {
    case CorpusSource::Kind::file:
      return load_corpus(src.path, src.n_samples, src.seq_len, sample_seed);
    case CorpusSource::Kind::generated: {
      CalibCorpus c = corpus_from_bytes(to_string(src.domain), generate_corpus(src.domain, src.bytes, text_seed),
                                        src.n_samples, src.seq_len, sample_seed);
      return c;
    }
    case CorpusSource::Kind::model_samples:
      return sample_corpus(model_fp, src.n_samples, src.seq_len, sample_seed);
  }
  throw ConfigError("unknown corpus source");
}

std::vector<LayerRecord> calibration_records(const TinyDecoder& model_fp, const CalibCorpus& calib, std::size_t jobs,
                                             StepTimes* times) {
  if (jobs == 0) jobs = default_jobs();
  auto t0 = Clock::now();
  auto captured = capture_activations(model_fp, calib, jobs);
  if (times) (*times)["capture"] += seconds_since(t0);
  std::vector<LayerRecord> records;
  for (const auto* l : model_fp.linears()) records.push_back(std::move(captured.at(l->id())));
  t0 = Clock::now();
  parallel_for(records.size(), jobs, [&](std::size_t i) { records[i] = accumulate_hessian(std::move(records[i])); });
  if (times) (*times)["hessian"] += seconds_since(t0);
  return records;
}

PipelineResult run_recipe(const PipelineConfig& cfg, const TinyDecoder& model_fp, const CalibCorpus& calib,
                          const CalibCorpus& eval, std::size_t jobs) {
  const auto t_all = Clock::now();
  StepTimes times;
  std::vector<LayerRecord> records;
  if (cfg.quantizes_weights()) records = calibration_records(model_fp, calib, jobs, &times);
  PipelineResult res = run_recipe_records(cfg, model_fp, records, eval, jobs, &times);
  res.report.extra["calib_corpus"] = calib.name;
  res.timing["total"] = seconds_since(t_all);
  return res;
}

PipelineResult run_recipe_records(const PipelineConfig& cfg, const TinyDecoder& model_fp,
                                  const std::vector<LayerRecord>& records, const CalibCorpus& eval, std::size_t jobs,
                                  StepTimes* prior_times) {
  if (jobs == 0) jobs = default_jobs();
  const Recipe recipe = Recipe::parse(cfg.recipe, cfg.force);
  if (!recipe.empty() && !cfg.quantizes_weights()) throw ConfigError("recipe needs quantized weights");
  const auto t_all = Clock::now();
  StepTimes times = prior_times ? *prior_times : StepTimes{};
  PipelineResult res;
  res.model_q = model_fp;

  if (cfg.quantizes_weights()) {
    if (records.size() != model_fp.linears().size()) throw StateError("calibration records do not cover the model");
    res.layers.resize(records.size());
    std::vector<StepTimes> layer_times(records.size());
    parallel_for(records.size(), jobs, [&](std::size_t i) {
      res.layers[i] = quantize_record(records[i], recipe, cfg, &layer_times[i]);
    });
    for (const auto& lt : layer_times)
      for (const auto& [k, v] : lt) times[k] += v;

    auto t0 = Clock::now();
    const std::optional<QuantSpec> spec_a = cfg.weight_only() ? std::nullopt : std::optional<QuantSpec>(cfg.a);
    const LinearMode mode = cfg.weight_only() ? LinearMode::weight_only : LinearMode::weight_activation;
    for (const auto& o : res.layers) {
      if (o.w_spec.bits == 16) continue;
      res.model_q.linear(o.layer_id).quantize(mode, o.w_spec, spec_a, o.artifacts);
    }
    times["quantize"] = seconds_since(t0);

    for (const auto& rec : records) {
      const QuantizableLinear& lq = res.model_q.linear(rec.layer_id);
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& x : rec.activations) {
        const Matrix y = matmul_nt(x, rec.weight);
        sum += mean_squared_diff(y, lq.forward(x)) * static_cast<double>(y.size());
        count += y.size();
      }
      res.report.calib_layer_mse[rec.layer_id] = sum / static_cast<double>(count);
    }
  }

  auto t0 = Clock::now();
  const auto calib_mse = std::move(res.report.calib_layer_mse);
  res.report = compare(model_fp, res.model_q, eval, cfg.kv, jobs);
  res.report.calib_layer_mse = calib_mse;
  times["eval"] = seconds_since(t0);

  res.report.recipe = recipe.render();
  res.report.bits = describe_bits(cfg.w_bits, cfg.a_bits, cfg.w_bits == 16 ? 0 : (cfg.w.granularity == Granularity::per_group ? cfg.w.group_size : 0));
  Json layers = Json::object();
  for (const auto& o : res.layers) {
    Json l;
    l["w_bits"] = o.w_spec.bits;
    if (!o.artifacts.scale.empty()) {
      l["gamma"] = o.gamma ? Json(*o.gamma) : Json(nullptr);
      const auto& s = o.artifacts.scale;
      l["scale_mean"] = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    }
    if (o.artifacts.bounds || o.clipped_groups > 0) l["clipped_groups"] = o.clipped_groups;
    if (o.artifacts.plan) {
      l["fp_columns"] = o.artifacts.plan->keep_columns.size();
      l["fp_elements"] = o.artifacts.plan->keep_elements.size();
    }
    if (!o.artifacts.act_keep.empty()) l["fp_act_columns"] = o.artifacts.act_keep;
    if (o.artifacts.dynamic_outliers > 0) l["dynamic_outliers"] = o.artifacts.dynamic_outliers;
    layers[o.layer_id] = l;
  }
  res.report.extra = Json{{"kv", ptq::to_json(cfg.kv)},
                          {"calib_corpus", ""},
                          {"eval_corpus", eval.name},
                          {"clip_objective", to_string(cfg.clip_objective)},
                          {"static_activation_range", "mean of per-batch min/max"},
                          {"layers", layers}};
  times["total"] = seconds_since(t_all);
  res.timing = Json::object();
  for (const auto& [k, v] : times) res.timing[k] = v;
  return res;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, std::size_t jobs) {
  const TinyDecoder model = build_model(cfg);
  const CalibCorpus calib = build_corpus(cfg.corpus, model);
  const CalibCorpus eval = build_corpus(cfg.eval, model);
  return run_recipe(cfg, model, calib, eval, jobs);
}

// ---------------------------------------------------------------- best practice

Budget parse_budget(const std::string& s) {
  if (s == "fast") return Budget::fast;
  if (s == "thorough") return Budget::thorough;
  throw ConfigError("budget must be fast or thorough (got '" + s + "')");
}

std::string best_practice_recipe(const Goal& goal, Budget budget) {
  if (budget == Budget::fast) return "TS-v1+CS-asym";
  return goal.weight_only ? "TS-v1+CL(init=CS-asym)" : "TL(init=TS-v1)+CL(init=CS-asym)";
}

PipelineConfig best_practice_config(const Goal& goal, Budget budget, PipelineConfig base) {
  if (!supported_bits(goal.w_bits)) throw ConfigError("unsupported weight bits " + std::to_string(goal.w_bits));
  base.recipe = best_practice_recipe(goal, budget);
  base.w_bits = goal.w_bits;
  base.a_bits = goal.weight_only ? 16 : goal.a_bits;
  if (!goal.weight_only && !supported_bits(base.a_bits)) {
    throw ConfigError("unsupported activation bits " + std::to_string(base.a_bits));
  }
  base.w = default_weight_spec(base.w_bits, goal.weight_only);
  if (!goal.weight_only) base.a = default_activation_spec(base.a_bits);
  base.kv = goal.kv ? KVCacheQuant{4, 8} : KVCacheQuant{16, 8};
  base.resolve();
  return base;
}

PipelineResult best_practice(const Goal& goal, Budget budget, const TinyDecoder& model_fp, const CalibCorpus& calib,
                             const CalibCorpus& eval, PipelineConfig base, std::size_t jobs) {
  return run_recipe(best_practice_config(goal, budget, std::move(base)), model_fp, calib, eval, jobs);
}

}  // namespace ptq
