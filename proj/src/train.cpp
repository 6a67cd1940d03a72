#include "hydra/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "hydra/common.hpp"

namespace hydra {

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "'");
}

const char* to_string(InferenceMode m) {
  switch (m) {
    case InferenceMode::kArgmaxImitation: return "argmax-imitation";
    case InferenceMode::kPostProcess: return "post-process";
    case InferenceMode::kAssembledCost: return "assembled-cost";
    case InferenceMode::kAssembledCostGrid: return "assembled-cost+grid";
  }
  return "?";
}

InferenceMode parse_inference_mode(const std::string& s) {
  if (s == "argmax-imitation") return InferenceMode::kArgmaxImitation;
  if (s == "post-process") return InferenceMode::kPostProcess;
  if (s == "assembled-cost") return InferenceMode::kAssembledCost;
  if (s == "assembled-cost+grid") return InferenceMode::kAssembledCostGrid;
  throw ConfigError("unknown inference mode '" + s + "'");
}

void ExperimentConfig::validate() const {
  world.validate();
  raster.validate();
  vocab.kinematics.validate();
  if (splits.train < 1 || splits.val < 1 || splits.test < 1)
    throw ConfigError("every split needs at least one scenario");
  if (static_cast<std::uint64_t>(std::max({splits.train, splits.val, splits.test})) > kSplitStride)
    throw ConfigError("split larger than the seed stride");
  if (model_seeds.empty()) throw ConfigError("at least one model seed required");
  if (vocab.samples < vocab.kmeans.k) throw ConfigError("fewer trajectory samples than vocabulary entries");
  if (vocab.kinematics.horizon != world.horizon || vocab.kinematics.dt != world.dt)
    throw ConfigError("vocabulary and world horizons differ");
  if (model.horizon != world.horizon || model.grid != raster.grid ||
      static_cast<std::size_t>(model.vocab_size) != vocab.kmeans.k)
    throw ConfigError("model shape does not match world/raster/vocabulary");
  model.validate();
  if (epochs < 0 || batch < 1) throw ConfigError("epochs must be >= 0 and batch >= 1");
  if (!(adam.lr > 0.0) || adam.weight_decay < 0.0) throw ConfigError("invalid optimizer settings");
  if (!(lambda_kd >= 0.0)) throw ConfigError("lambda_kd must be non-negative");
  if (noise.dropout < 0.0 || noise.dropout > 1.0 || noise.additive < 0.0)
    throw ConfigError("invalid noise settings");
  default_weights.validate();
}

std::uint64_t scenario_seed(const ExperimentConfig& cfg, Split split, std::size_t index) {
  return cfg.data_seed * 10 * kSplitStride + static_cast<std::uint64_t>(split) * kSplitStride + index;
}

std::uint64_t observation_seed(const std::string& scenario_id) {
  Fnv1a h;
  h.update("observation:");
  h.update(scenario_id);
  return h.digest();
}

int split_size(const ExperimentConfig& cfg, Split split) {
  switch (split) {
    case Split::kTrain: return cfg.splits.train;
    case Split::kVal: return cfg.splits.val;
    case Split::kTest: return cfg.splits.test;
  }
  return 0;
}

Vocabulary build_vocabulary(const VocabConfig& cfg, int horizon, double dt) {
  KinematicConfig kin = cfg.kinematics;
  kin.horizon = horizon;
  kin.dt = dt;
  const auto samples = sample_trajectories(cfg.samples, kin, cfg.sample_seed);
  return kmeans_cluster(samples, cfg.kmeans).vocabulary;
}

Trajectory expert_in_ego_frame(const Scenario& s) {
  Trajectory t;
  t.dt = s.expert_trajectory.dt;
  t.poses.reserve(s.expert_trajectory.poses.size());
  for (const Pose& p : s.expert_trajectory.poses) t.poses.push_back(relative(s.ego_start.pose, p));
  return t;
}

const std::vector<Sample>& Dataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

double resolve_sigma(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  return cfg.sigma > 0.0 ? cfg.sigma : median_pairwise_distance(vocab);
}

Sample build_sample(const ExperimentConfig& cfg, Split split, std::size_t index, const Vocabulary& vocab,
                    std::uint64_t vocab_hash, double sigma) {
  const std::uint64_t seed = scenario_seed(cfg, split, index);
  Sample s;
  s.scenario = generate_scenario(seed, cfg.world);
  s.observation = render_observation(s.scenario, cfg.raster, cfg.noise, observation_seed(s.scenario.id));
  s.target = imitation_target(vocab, expert_in_ego_frame(s.scenario), sigma);
  s.labels = simulate_vocabulary(s.scenario, vocab, vocab_hash, cfg.metrics);
  return s;
}

std::vector<Sample> build_split(const ExperimentConfig& cfg, Split split, const Vocabulary& vocab,
                                std::uint64_t vocab_hash, double sigma) {
  std::vector<Sample> out(static_cast<std::size_t>(split_size(cfg, split)));
  // Scenario generation and rendering are cheap; labels parallelise internally.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = build_sample(cfg, split, i, vocab, vocab_hash, sigma);
  return out;
}

Dataset build_dataset(const ExperimentConfig& cfg, const Vocabulary& vocab, std::uint64_t vocab_hash) {
  cfg.validate();
  Dataset d;
  d.vocab_hash = vocab_hash;
  d.sigma = resolve_sigma(cfg, vocab);
  d.train = build_split(cfg, Split::kTrain, vocab, vocab_hash, d.sigma);
  d.val = build_split(cfg, Split::kVal, vocab, vocab_hash, d.sigma);
  d.test = build_split(cfg, Split::kTest, vocab, vocab_hash, d.sigma);
  return d;
}

void check_label_integrity(const Dataset& data, std::uint64_t vocab_hash) {
  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest})
    for (const Sample& s : data.split(sp))
      if (s.labels.vocab_hash != vocab_hash || data.vocab_hash != vocab_hash)
        throw IntegrityError("labels for " + s.scenario.id + " were computed against vocabulary " +
                             hex64(s.labels.vocab_hash) + ", expected " + hex64(vocab_hash));
}

// ---- training ---------------------------------------------------------------

namespace {

InferenceMode validation_mode(DistillationTarget t) {
  return t == DistillationTarget::kNone ? InferenceMode::kArgmaxImitation : InferenceMode::kAssembledCost;
}

double selected_pdm(std::span<const Sample> samples, std::span<const PredictionBundle> bundles,
                    InferenceMode mode, const Vocabulary& vocab, const CostWeights& w,
                    const MetricsConfig& mcfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t j = select_index(mode, bundles[i], samples[i], vocab, w, mcfg);
    total += pdm_score(samples[i].labels.scores[j]);
  }
  return 100.0 * total / static_cast<double>(samples.size());
}

}  // namespace

FitResult fit(const ExperimentConfig& cfg, const Dataset& data, const Vocabulary& vocab,
              DistillationTarget target, std::uint64_t model_seed) {
  cfg.validate();
  check_label_integrity(data, vocabulary_hash(vocab));
  if (data.train.empty() || data.val.empty()) throw ConfigError("fit: empty train or validation split");

  ModelConfig mcfg = cfg.model;
  mcfg.target = target;
  StudentModel model = StudentModel::initialized(mcfg, model_seed);
  model.vocab_hash = data.vocab_hash;
  const RowMatrix tau = vocabulary_features(vocab, mcfg);
  const double lambda = target == DistillationTarget::kNone ? 0.0 : cfg.lambda_kd;

  std::vector<RowMatrix> teacher(data.train.size());
  for (std::size_t i = 0; i < teacher.size(); ++i)
    teacher[i] = distillation_targets(data.train[i].labels, target == DistillationTarget::kNone
                                                                 ? DistillationTarget::kMultiTarget
                                                                 : target);
  std::vector<TrainingExample> examples(data.train.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    examples[i] = {&data.train[i].observation, &data.train[i].target, &teacher[i]};

  const InferenceMode vmode = validation_mode(target);
  auto validate = [&](const StudentModel& m) {
    const ModelRef ref{&m, 1.0};
    const auto bundles = predict_split({&ref, 1}, data.val, vocab);
    return selected_pdm(data.val, bundles, vmode, vocab, cfg.default_weights, cfg.metrics);
  };

  FitResult res;
  res.best = model;
  res.best_val_pdm = validate(model);
  res.curve.push_back({0, 0.0, 0.0, 0.0, res.best_val_pdm});
  {
    // Epoch-0 loss over the training set, for the curve.
    std::vector<double> g;
    LossReport r = compute_gradients(model, tau, examples, lambda, g);
    res.curve[0].loss = r.total;
    res.curve[0].imitation = r.imitation;
    res.curve[0].distillation = r.distillation;
  }

  std::mt19937_64 rng(model_seed ^ 0x5bd1e995u);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState opt;
  std::vector<TrainingExample> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with our own draws so the order does not depend on the standard library.
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    EpochStats st;
    st.epoch = epoch;
    double seen = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(cfg.batch)); ++i)
        batch.push_back(examples[order[i]]);
      LossReport r;
      try {
        r = train_step(model, tau, batch, opt, cfg.adam, lambda);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(opt.step));
      }
      const double n = static_cast<double>(batch.size());
      st.loss += n * r.total;
      st.imitation += n * r.imitation;
      st.distillation += n * r.distillation;
      seen += n;
    }
    st.loss /= seen;
    st.imitation /= seen;
    st.distillation /= seen;
    st.val_pdm = validate(model);
    if (st.val_pdm > res.best_val_pdm) {
      res.best_val_pdm = st.val_pdm;
      res.best = model;
      res.best_epoch = epoch;
    }
    res.curve.push_back(st);
  }
  res.final_model = std::move(model);
  return res;
}

// ---- evaluation -------------------------------------------------------------

EvalReport make_report(std::vector<ScenarioRecord> records) {
  EvalReport r;
  r.records = std::move(records);
  SubScores sum{0.0, 0.0, 0.0, 0.0, 0.0};
  double pdm = 0.0;
  for (const auto& rec : r.records) {
    for (std::size_t m = 0; m < kNumMetrics; ++m) sum[m] += rec.scores[m];
    pdm += rec.pdm;
  }
  const double n = r.records.empty() ? 1.0 : static_cast<double>(r.records.size());
  for (std::size_t m = 0; m < kNumMetrics; ++m) r.mean[m] = 100.0 * sum[m] / n;
  r.pdm = 100.0 * pdm / n;
  return r;
}

std::vector<PredictionBundle> predict_split(std::span<const ModelRef> models,
                                            std::span<const Sample> samples, const Vocabulary& vocab) {
  if (models.empty()) throw ConfigError("predict_split: no models");
  const ModelConfig& first = models.front().model->config();
  std::vector<double> weights;
  for (const ModelRef& m : models) {
    const ModelConfig& c = m.model->config();
    if (m.model->vocab_hash != models.front().model->vocab_hash)
      throw IntegrityError("ensemble members were trained on different vocabularies");
    if (c.metric_heads() != first.metric_heads() || c.vocab_size != first.vocab_size)
      throw ConfigError("ensemble members have different head layouts");
    if (!(m.weight >= 0.0)) throw ConfigError("ensemble: weights must be non-negative");
    weights.push_back(m.weight);
  }
  if (std::abs(std::accumulate(weights.begin(), weights.end(), 0.0) - 1.0) > 1e-9)
    throw ConfigError("ensemble: weights must sum to 1");
  std::vector<RowMatrix> taus;
  for (const ModelRef& m : models) taus.push_back(vocabulary_features(vocab, m.model->config()));

  std::vector<PredictionBundle> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    std::vector<PredictionBundle> per;
    per.reserve(models.size());
    for (std::size_t m = 0; m < models.size(); ++m)
      per.push_back(forward(*models[m].model, samples[i].observation, taus[m]));
    out[i] = models.size() == 1 ? std::move(per.front()) : ensemble_subscores(per, weights);
  });
  return out;
}

std::size_t select_index(InferenceMode mode, const PredictionBundle& bundle, const Sample& sample,
                         const Vocabulary& vocab, const CostWeights& w, const MetricsConfig& mcfg) {
  switch (mode) {
    case InferenceMode::kArgmaxImitation:
      return argmax_index(bundle.imitation);
    case InferenceMode::kPostProcess: {
      const Pose& ego = sample.scenario.ego_start.pose;
      const PredictedPerception p = perceive(sample.observation, ego);
      const WorldModel world = perceived_world(p, sample.scenario.route_centerline, vocab, ego);
      return baseline_select(BaselineMode::kB, bundle, world, vocab, ego, w, mcfg).index;
    }
    case InferenceMode::kAssembledCost:
    case InferenceMode::kAssembledCostGrid:
      return argmin_index(assemble_cost(bundle, w));
  }
  return 0;
}

namespace {

ScenarioRecord teacher_record(const Sample& s, const Vocabulary& vocab, std::size_t index,
                              const MetricsConfig& mcfg) {
  ScenarioRecord r;
  r.scenario_id = s.scenario.id;
  r.index = index;
  r.scores = evaluate_trajectory(s.scenario, to_world(vocab[index], s.scenario.ego_start.pose), mcfg);
  r.pdm = pdm_score(r.scores);
  return r;
}

}  // namespace

EvalReport evaluate(std::span<const ModelRef> models, std::span<const Sample> samples,
                    const Vocabulary& vocab, InferenceMode mode, const std::optional<CostWeights>& grid_weights,
                    const ExperimentConfig& cfg) {
  if (samples.empty()) throw ConfigError("evaluate: empty split");
  if (mode == InferenceMode::kAssembledCostGrid && !grid_weights)
    throw ConfigError("evaluate: assembled-cost+grid requires searched weights");
  const CostWeights w = mode == InferenceMode::kAssembledCostGrid ? *grid_weights : cfg.default_weights;
  w.validate();
  for (const ModelRef& m : models)
    for (const Sample& s : samples)
      if (m.model->vocab_hash != s.labels.vocab_hash)
        throw IntegrityError("checkpoint and labels disagree on the vocabulary");

  const auto bundles = predict_split(models, samples, vocab);
  std::vector<std::size_t> picks(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    picks[i] = select_index(mode, bundles[i], samples[i], vocab, w, cfg.metrics);
  std::vector<ScenarioRecord> records(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    records[i] = teacher_record(samples[i], vocab, picks[i], cfg.metrics);
  });
  return make_report(std::move(records));
}

EvalReport oracle_report(std::span<const Sample> samples, const Vocabulary& vocab, const MetricsConfig& mcfg) {
  std::vector<ScenarioRecord> records(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& sc = samples[i].labels.scores;
    std::size_t best = 0;
    for (std::size_t j = 1; j < sc.size(); ++j)
      if (pdm_score(sc[j]) > pdm_score(sc[best])) best = j;
    records[i] = teacher_record(samples[i], vocab, best, mcfg);
  });
  return make_report(std::move(records));
}

GridSearchResult search_weights(std::span<const ModelRef> models, std::span<const Sample> val,
                                const Vocabulary& vocab, const GridConfig& grid) {
  const auto bundles = predict_split(models, val, vocab);
  std::vector<ValidationItem> items(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) items[i] = {&bundles[i], &val[i].labels};
  return grid_search_weights(items, grid);
}

}  // namespace hydra
