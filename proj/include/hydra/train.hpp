#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hydra/infer.hpp"
#include "hydra/metrics.hpp"
#include "hydra/model.hpp"
#include "hydra/vocab.hpp"
#include "hydra/world.hpp"

namespace hydra {

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split s);
Split parse_split(const std::string& s);

enum class InferenceMode { kArgmaxImitation, kPostProcess, kAssembledCost, kAssembledCostGrid };
const char* to_string(InferenceMode m);
InferenceMode parse_inference_mode(const std::string& s);

struct SplitSizes {
  int train = 800;
  int val = 100;
  int test = 200;
};

struct VocabConfig {
  std::size_t samples = 20000;
  std::uint64_t sample_seed = 0;
  KinematicConfig kinematics;
  KMeansOptions kmeans;
};

struct ExperimentConfig {
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> model_seeds = {1, 2, 3};
  SplitSizes splits;
  WorldConfig world;
  RasterConfig raster;
  NoiseConfig noise;
  VocabConfig vocab;
  MetricsConfig metrics;
  ModelConfig model;
  // Desk-scale runs make only a few hundred updates, so the step size is
  // larger than the optimizer's own default.
  AdamConfig adam{.lr = 3e-3};
  int epochs = 20;
  int batch = 64;
  double lambda_kd = 1.0;
  double sigma = 0.0;  // imitation-target temperature; <= 0 means median pairwise vocab distance
  GridConfig grid;
  CostWeights default_weights;

  void validate() const;
};

// Scenario seeds live in disjoint ranges per split: data_seed * 1e7 + {0, 1e6, 2e6} + index.
inline constexpr std::uint64_t kSplitStride = 1'000'000;
std::uint64_t scenario_seed(const ExperimentConfig& cfg, Split split, std::size_t index);
// Noise seed of a scenario's observation, derived from its id.
std::uint64_t observation_seed(const std::string& scenario_id);
int split_size(const ExperimentConfig& cfg, Split split);

Vocabulary build_vocabulary(const VocabConfig& cfg, int horizon, double dt);

// Expert trajectory expressed in the ego start frame (the vocabulary's frame).
Trajectory expert_in_ego_frame(const Scenario& s);

struct Sample {
  Scenario scenario;
  Observation observation;
  ImitationTarget target;
  TeacherLabels labels;
};

struct Dataset {
  std::uint64_t vocab_hash = 0;
  double sigma = 0.0;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;

  const std::vector<Sample>& split(Split s) const;
};

double resolve_sigma(const ExperimentConfig& cfg, const Vocabulary& vocab);

Sample build_sample(const ExperimentConfig& cfg, Split split, std::size_t index, const Vocabulary& vocab,
                    std::uint64_t vocab_hash, double sigma);
std::vector<Sample> build_split(const ExperimentConfig& cfg, Split split, const Vocabulary& vocab,
                                std::uint64_t vocab_hash, double sigma);
Dataset build_dataset(const ExperimentConfig& cfg, const Vocabulary& vocab, std::uint64_t vocab_hash);

// Throws IntegrityError when any label set was computed against another vocabulary.
void check_label_integrity(const Dataset& data, std::uint64_t vocab_hash);

// ---- training ---------------------------------------------------------------

struct EpochStats {
  int epoch = 0;  // 0 = before any update
  double loss = 0.0;
  double imitation = 0.0;
  double distillation = 0.0;
  double val_pdm = 0.0;  // x100
};

struct FitResult {
  StudentModel best;
  StudentModel final_model;
  int best_epoch = 0;
  double best_val_pdm = 0.0;
  std::vector<EpochStats> curve;
};

// Model seed drives initialisation and minibatch shuffling. Distillation
// target `none` trains with lambda_kd = 0.
FitResult fit(const ExperimentConfig& cfg, const Dataset& data, const Vocabulary& vocab,
              DistillationTarget target, std::uint64_t model_seed);

// ---- evaluation -------------------------------------------------------------

struct ScenarioRecord {
  std::string scenario_id;
  std::size_t index = 0;
  SubScores scores;
  double pdm = 0.0;
};

struct EvalReport {
  std::vector<ScenarioRecord> records;
  SubScores mean;  // x100
  double pdm = 0.0;  // x100
};

EvalReport make_report(std::vector<ScenarioRecord> records);

struct ModelRef {
  const StudentModel* model = nullptr;
  double weight = 1.0;
};

// Student bundles for every sample, ensembled when more than one model is given.
std::vector<PredictionBundle> predict_split(std::span<const ModelRef> models,
                                            std::span<const Sample> samples, const Vocabulary& vocab);

std::size_t select_index(InferenceMode mode, const PredictionBundle& bundle, const Sample& sample,
                         const Vocabulary& vocab, const CostWeights& w, const MetricsConfig& mcfg);

// Teacher metrics are recomputed from ground truth on the selected entry.
EvalReport evaluate(std::span<const ModelRef> models, std::span<const Sample> samples,
                    const Vocabulary& vocab, InferenceMode mode, const std::optional<CostWeights>& grid_weights,
                    const ExperimentConfig& cfg);

// Per-scenario best vocabulary entry under the teacher.
EvalReport oracle_report(std::span<const Sample> samples, const Vocabulary& vocab, const MetricsConfig& mcfg);

GridSearchResult search_weights(std::span<const ModelRef> models, std::span<const Sample> val,
                                const Vocabulary& vocab, const GridConfig& grid);

}  // namespace hydra
