#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hydra/metrics.hpp"
#include "hydra/vocab.hpp"
#include "hydra/world.hpp"

namespace hydra {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// What the hydra heads are trained to reproduce.
enum class DistillationTarget { kMultiTarget, kPdmOnly, kNone };

const char* to_string(DistillationTarget t);
DistillationTarget parse_distillation_target(const std::string& s);

struct ModelConfig {
  int grid = 40;
  int horizon = 40;
  int tokens = 4;
  int dim = 64;
  int vocab_size = 256;
  DistillationTarget target = DistillationTarget::kMultiTarget;
  double traj_scale = 0.1;  // metres -> network units for vocabulary inputs

  int metric_heads() const { return target == DistillationTarget::kPdmOnly ? 1 : 5; }
  int raster_inputs() const { return grid * grid * 2; }
  void validate() const;
};

// One named tensor inside the flat parameter vector.
struct TensorSlot {
  std::string role;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

std::vector<TensorSlot> parameter_layout(const ModelConfig& cfg);

class StudentModel {
 public:
  StudentModel() = default;
  // All parameters zero.
  explicit StudentModel(const ModelConfig& cfg);
  // Xavier-uniform weights, zero biases.
  static StudentModel initialized(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorSlot>& layout() const { return layout_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  const TensorSlot& slot(const std::string& role) const;

  std::uint64_t vocab_hash = 0;

 private:
  ModelConfig cfg_;
  std::vector<TensorSlot> layout_;
  std::vector<double> params_;
};

struct PredictionBundle {
  Eigen::VectorXd imitation;     // k, softmax over the vocabulary
  RowMatrix metric_scores;       // k x heads; NC, DAC, TTC, C, EP or a single PDM column
};

struct ImitationTarget {
  Eigen::VectorXd y;
};

// Network inputs for a vocabulary: k x 3H, x/y scaled by traj_scale.
RowMatrix vocabulary_features(const Vocabulary& vocab, const ModelConfig& cfg);

PredictionBundle forward(const StudentModel& model, const Observation& obs, const Vocabulary& vocab);
PredictionBundle forward(const StudentModel& model, const Observation& obs,
                         const RowMatrix& vocab_features);

// Softmax over -||expert - T_i||^2 / sigma^2 in the flattened space.
ImitationTarget imitation_target(const Vocabulary& vocab, const Trajectory& expert, double sigma);

// Median pairwise flattened distance between vocabulary entries.
double median_pairwise_distance(const Vocabulary& vocab);

inline constexpr double kLogClamp = 1e-6;

double imitation_loss(const PredictionBundle& bundle, const ImitationTarget& target);

// k x heads soft targets matching the model's head layout.
RowMatrix distillation_targets(const TeacherLabels& labels, DistillationTarget target);

double distillation_loss(const PredictionBundle& bundle, const RowMatrix& targets);

struct TrainingExample {
  const Observation* observation = nullptr;
  const ImitationTarget* target = nullptr;
  const RowMatrix* teacher = nullptr;  // from distillation_targets()
};

struct LossReport {
  double total = 0.0;
  double imitation = 0.0;
  double distillation = 0.0;
};

// Batch-mean loss L_im + lambda_kd * L_kd and its exact gradient.
LossReport compute_gradients(const StudentModel& model, const RowMatrix& vocab_features,
                             std::span<const TrainingExample> batch, double lambda_kd,
                             std::vector<double>& grad);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

LossReport train_step(StudentModel& model, const RowMatrix& vocab_features,
                      std::span<const TrainingExample> batch, AdamState& opt,
                      const AdamConfig& adam, double lambda_kd);

}  // namespace hydra
