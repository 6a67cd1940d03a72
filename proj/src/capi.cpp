#include "hydra/hydra_plan.h"

#include <algorithm>
#include <cstring>
#include <memory>
#include <string>

#include "hydra/common.hpp"
#include "hydra/io.hpp"
#include "hydra/pipeline.hpp"
#include "hydra/train.hpp"

struct hydra_vocab {
  hydra::Vocabulary vocab;
  hydra::io::VocabProvenance provenance;
  std::uint64_t hash = 0;
};

struct hydra_scenarios {
  std::vector<hydra::Scenario> items;
};

struct hydra_model {
  hydra::StudentModel model;
};

struct hydra_pipeline {
  std::unique_ptr<hydra::Pipeline> pipeline;
};

namespace {

thread_local std::string g_last_error;

hydra_status fail(hydra_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

// Maps the exception taxonomy onto status codes.
template <class F>
hydra_status guarded(F&& f) {
  try {
    f();
    return HYDRA_OK;
  } catch (const hydra::ConfigError& e) {
    return fail(HYDRA_E_CONFIG, e.what());
  } catch (const hydra::IoError& e) {
    return fail(HYDRA_E_IO, e.what());
  } catch (const hydra::IntegrityError& e) {
    return fail(HYDRA_E_INTEGRITY, e.what());
  } catch (const hydra::NumericError& e) {
    return fail(HYDRA_E_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(HYDRA_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(HYDRA_E_INTERNAL, e.what());
  } catch (...) {
    return fail(HYDRA_E_INTERNAL, "unknown error");
  }
}

#define HYDRA_REQUIRE(cond, what) \
  if (!(cond)) return fail(HYDRA_E_ARGUMENT, what)

}  // namespace

extern "C" {

const char* hydra_version(void) { return hydra::kToolVersion; }

const char* hydra_last_error(void) { return g_last_error.c_str(); }

const char* hydra_status_name(hydra_status s) {
  switch (s) {
    case HYDRA_OK: return "ok";
    case HYDRA_E_ARGUMENT: return "argument error";
    case HYDRA_E_CONFIG: return "configuration error";
    case HYDRA_E_IO: return "i/o error";
    case HYDRA_E_INTEGRITY: return "integrity error";
    case HYDRA_E_NUMERIC: return "numeric error";
    case HYDRA_E_INTERNAL: return "internal error";
  }
  return "unknown status";
}

// ---- vocabulary ----

hydra_status hydra_vocab_build(uint64_t n_samples, uint64_t k, uint64_t seed, hydra_vocab** out) {
  HYDRA_REQUIRE(out, "hydra_vocab_build: out is null");
  *out = nullptr;
  HYDRA_REQUIRE(n_samples >= 1, "hydra_vocab_build: n must be >= 1");
  HYDRA_REQUIRE(k >= 1, "hydra_vocab_build: k must be >= 1");
  return guarded([&] {
    auto v = std::make_unique<hydra_vocab>();
    hydra::KinematicConfig kin;
    hydra::KMeansOptions opt;
    opt.k = static_cast<std::size_t>(k);
    opt.seed = seed;
    const auto samples = hydra::sample_trajectories(static_cast<std::size_t>(n_samples), kin, seed);
    const hydra::KMeansResult km = hydra::kmeans_cluster(samples, opt);
    v->vocab = km.vocabulary;
    v->provenance = {static_cast<std::size_t>(n_samples), seed, seed, kin, km.iterations, km.sse};
    v->hash = hydra::vocabulary_hash(v->vocab);
    *out = v.release();
  });
}

hydra_status hydra_vocab_load(const char* path, hydra_vocab** out) {
  HYDRA_REQUIRE(out && path, "hydra_vocab_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto v = std::make_unique<hydra_vocab>();
    v->vocab = hydra::io::read_vocabulary(path);
    v->hash = hydra::vocabulary_hash(v->vocab);
    *out = v.release();
  });
}

hydra_status hydra_vocab_save(const hydra_vocab* v, const char* path) {
  HYDRA_REQUIRE(v && path, "hydra_vocab_save: null argument");
  return guarded([&] { hydra::io::write_vocabulary(path, v->vocab, v->provenance); });
}

hydra_status hydra_vocab_info(const hydra_vocab* v, uint64_t* k, uint32_t* horizon, uint64_t* hash) {
  HYDRA_REQUIRE(v, "hydra_vocab_info: null handle");
  if (k) *k = v->vocab.size();
  if (horizon) *horizon = static_cast<uint32_t>(v->vocab.horizon);
  if (hash) *hash = v->hash;
  return HYDRA_OK;
}

hydra_status hydra_vocab_entry(const hydra_vocab* v, uint64_t index, double* xyh, uint64_t capacity) {
  HYDRA_REQUIRE(v && xyh, "hydra_vocab_entry: null argument");
  HYDRA_REQUIRE(index < v->vocab.size(), "hydra_vocab_entry: index out of range");
  const auto& poses = v->vocab[static_cast<std::size_t>(index)].poses;
  HYDRA_REQUIRE(capacity >= poses.size() * 3, "hydra_vocab_entry: buffer too small");
  for (std::size_t i = 0; i < poses.size(); ++i) {
    xyh[3 * i] = poses[i].x;
    xyh[3 * i + 1] = poses[i].y;
    xyh[3 * i + 2] = poses[i].heading;
  }
  return HYDRA_OK;
}

void hydra_vocab_free(hydra_vocab* v) { delete v; }

// ---- scenarios ----

hydra_status hydra_scenarios_generate(uint64_t first_seed, uint64_t count, hydra_scenarios** out) {
  HYDRA_REQUIRE(out, "hydra_scenarios_generate: out is null");
  *out = nullptr;
  return guarded([&] {
    auto s = std::make_unique<hydra_scenarios>();
    s->items.resize(static_cast<std::size_t>(count));
    const hydra::WorldConfig cfg;
    hydra::parallel_for(s->items.size(), [&](std::size_t i) {
      s->items[i] = hydra::generate_scenario(first_seed + i, cfg);
    });
    *out = s.release();
  });
}

hydra_status hydra_scenarios_load(const char* path, hydra_scenarios** out) {
  HYDRA_REQUIRE(out && path, "hydra_scenarios_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto s = std::make_unique<hydra_scenarios>();
    s->items = hydra::io::read_scenarios(path);
    *out = s.release();
  });
}

hydra_status hydra_scenarios_save(const hydra_scenarios* s, const char* path) {
  HYDRA_REQUIRE(s && path, "hydra_scenarios_save: null argument");
  return guarded([&] { hydra::io::write_scenarios(path, s->items); });
}

uint64_t hydra_scenarios_count(const hydra_scenarios* s) { return s ? s->items.size() : 0; }

void hydra_scenarios_free(hydra_scenarios* s) { delete s; }

// ---- teacher ----

hydra_status hydra_pdm_score(const double sub_scores[5], double* out) {
  HYDRA_REQUIRE(sub_scores && out, "hydra_pdm_score: null argument");
  *out = hydra::pdm_score({sub_scores[0], sub_scores[1], sub_scores[2], sub_scores[3], sub_scores[4]});
  return HYDRA_OK;
}

hydra_status hydra_teacher_scores(const hydra_scenarios* s, uint64_t scenario, const hydra_vocab* v,
                                  uint64_t entry, double out[5]) {
  HYDRA_REQUIRE(s && v && out, "hydra_teacher_scores: null argument");
  HYDRA_REQUIRE(scenario < s->items.size(), "hydra_teacher_scores: scenario index out of range");
  HYDRA_REQUIRE(entry < v->vocab.size(), "hydra_teacher_scores: entry index out of range");
  return guarded([&] {
    const hydra::Scenario& sc = s->items[static_cast<std::size_t>(scenario)];
    const hydra::SubScores r = hydra::evaluate_trajectory(
        sc, hydra::to_world(v->vocab[static_cast<std::size_t>(entry)], sc.ego_start.pose));
    for (std::size_t m = 0; m < hydra::kNumMetrics; ++m) out[m] = r[m];
  });
}

hydra_status hydra_simulate(const hydra_scenarios* s, const hydra_vocab* v, const char* bin_path,
                            const char* index_path) {
  HYDRA_REQUIRE(s && v && bin_path && index_path, "hydra_simulate: null argument");
  return guarded([&] {
    std::vector<hydra::TeacherLabels> labels;
    labels.reserve(s->items.size());
    for (const auto& sc : s->items) labels.push_back(hydra::simulate_vocabulary(sc, v->vocab, v->hash));
    hydra::io::write_labels(bin_path, index_path, labels);
  });
}

// ---- models and inference ----

hydra_status hydra_model_load(const char* path, hydra_model** out) {
  HYDRA_REQUIRE(out && path, "hydra_model_load: null argument");
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<hydra_model>();
    m->model = hydra::io::read_checkpoint(path);
    *out = m.release();
  });
}

void hydra_model_free(hydra_model* m) { delete m; }

hydra_status hydra_weights_load(const char* path, double weights[4]) {
  HYDRA_REQUIRE(path && weights, "hydra_weights_load: null argument");
  return guarded([&] {
    const hydra::CostWeights w = hydra::io::read_weights(path);
    weights[0] = w.w1;
    weights[1] = w.w2;
    weights[2] = w.w3;
    weights[3] = w.w4;
  });
}

void hydra_infer_options_default(hydra_infer_options* opts) {
  if (!opts) return;
  const hydra::CostWeights w;
  const hydra::NoiseConfig n;
  const hydra::RasterConfig r;
  opts->cost_weights[0] = w.w1;
  opts->cost_weights[1] = w.w2;
  opts->cost_weights[2] = w.w3;
  opts->cost_weights[3] = w.w4;
  opts->noise_dropout = n.dropout;
  opts->noise_additive = n.additive;
  opts->cell_size = r.cell_size;
}

hydra_status hydra_infer(const hydra_model* const* models, const double* model_weights, uint64_t n_models,
                         const hydra_scenarios* s, const hydra_vocab* v, const hydra_infer_options* opts,
                         hydra_selection* out, uint64_t capacity) {
  HYDRA_REQUIRE(models && model_weights && s && v && out, "hydra_infer: null argument");
  HYDRA_REQUIRE(n_models >= 1, "hydra_infer: at least one model required");
  HYDRA_REQUIRE(capacity >= s->items.size(), "hydra_infer: output buffer too small");
  for (uint64_t i = 0; i < n_models; ++i) HYDRA_REQUIRE(models[i], "hydra_infer: null model handle");
  hydra_infer_options o;
  hydra_infer_options_default(&o);
  if (opts) o = *opts;
  return guarded([&] {
    const hydra::CostWeights w{o.cost_weights[0], o.cost_weights[1], o.cost_weights[2], o.cost_weights[3]};
    w.validate();
    std::vector<hydra::ModelRef> refs;
    for (uint64_t i = 0; i < n_models; ++i) {
      if (models[i]->model.vocab_hash != v->hash)
        throw hydra::IntegrityError("checkpoint was trained on vocabulary " + hydra::hex64(models[i]->model.vocab_hash) +
                                    ", not " + hydra::hex64(v->hash));
      refs.push_back({&models[i]->model, model_weights[i]});
    }
    const hydra::RasterConfig raster{models[0]->model.config().grid, o.cell_size};
    raster.validate();
    const hydra::NoiseConfig noise{o.noise_dropout, o.noise_additive};
    std::vector<hydra::Sample> samples(s->items.size());
    hydra::parallel_for(samples.size(), [&](std::size_t i) {
      samples[i].scenario = s->items[i];
      samples[i].observation =
          hydra::render_observation(s->items[i], raster, noise, hydra::observation_seed(s->items[i].id));
    });
    const auto bundles = hydra::predict_split(refs, samples, v->vocab);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t idx = hydra::select_trajectory(bundles[i], w, v->vocab).index;
      const auto& sc = samples[i].scenario;
      const hydra::SubScores r = hydra::evaluate_trajectory(sc, hydra::to_world(v->vocab[idx], sc.ego_start.pose));
      out[i].index = idx;
      for (std::size_t m = 0; m < hydra::kNumMetrics; ++m) out[i].scores[m] = r[m];
      out[i].pdm = hydra::pdm_score(r);
    }
  });
}

// ---- pipeline ----

hydra_status hydra_pipeline_open(const char* config_path, const char* run_dir, int has_seed, uint64_t seed,
                                 hydra_log_fn log, void* user, hydra_pipeline** out) {
  HYDRA_REQUIRE(out && run_dir, "hydra_pipeline_open: null argument");
  *out = nullptr;
  return guarded([&] {
    hydra::PipelineConfig cfg = config_path ? hydra::load_config(config_path) : hydra::PipelineConfig{};
    if (has_seed) cfg.experiment.data_seed = seed;
    hydra::Pipeline::Logger logger;
    if (log) logger = [log, user](std::string_view line) { log(std::string(line).c_str(), user); };
    auto p = std::make_unique<hydra_pipeline>();
    p->pipeline = std::make_unique<hydra::Pipeline>(std::move(cfg), run_dir, std::move(logger));
    *out = p.release();
  });
}

hydra_status hydra_pipeline_run_stage(hydra_pipeline* p, const char* stage, uint64_t* units_run) {
  HYDRA_REQUIRE(p && stage, "hydra_pipeline_run_stage: null argument");
  return guarded([&] {
    const hydra::StageResult r = p->pipeline->run_stage(stage);
    if (units_run) *units_run = static_cast<uint64_t>(r.units_run);
  });
}

hydra_status hydra_pipeline_run(hydra_pipeline* p) {
  HYDRA_REQUIRE(p, "hydra_pipeline_run: null handle");
  return guarded([&] { p->pipeline->run(); });
}

hydra_status hydra_pipeline_table(const hydra_pipeline* p, char* buf, uint64_t capacity, uint64_t* needed) {
  HYDRA_REQUIRE(p, "hydra_pipeline_table: null handle");
  std::string text;
  const hydra_status st = guarded([&] { text = hydra::Pipeline::table_markdown(p->pipeline->table()); });
  if (st != HYDRA_OK) return st;
  if (needed) *needed = text.size() + 1;
  if (!buf || capacity < text.size() + 1) {
    if (buf && capacity > 0) buf[0] = '\0';
    return buf ? fail(HYDRA_E_ARGUMENT, "hydra_pipeline_table: buffer too small") : HYDRA_OK;
  }
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return HYDRA_OK;
}

void hydra_pipeline_free(hydra_pipeline* p) { delete p; }

}  // extern "C"
