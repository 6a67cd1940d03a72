#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hydra/metrics.hpp"
#include "hydra/model.hpp"

namespace hydra {

struct CostWeights {
  double w1 = 0.1;  // imitation
  double w2 = 1.0;  // NC
  double w3 = 1.0;  // DAC
  double w4 = 1.0;  // weighted TTC / C / EP term

  void validate() const;
  friend bool operator==(const CostWeights&, const CostWeights&) = default;
};

// cost_i = -(w1 log S_im + w2 log S_NC + w3 log S_DAC + w4 log(5 S_TTC + 2 S_C + 5 S_EP)).
// Scores are clamped to [eps, 1] and the inner sum to >= eps. A single-head
// (PDM) bundle uses -(w1 log S_im + w4 log S_PDM).
Eigen::VectorXd assemble_cost(const PredictionBundle& bundle, const CostWeights& w);

// Lowest value; ties to the lowest index.
std::size_t argmin_index(const Eigen::VectorXd& v);
std::size_t argmax_index(const Eigen::VectorXd& v);

struct Selection {
  std::size_t index = 0;
  Trajectory trajectory;  // ego frame, straight from the vocabulary
};

Selection select_trajectory(const PredictionBundle& bundle, const CostWeights& w,
                            const Vocabulary& vocab);

// Convex combination of metric scores and imitation vectors; the latter is
// renormalised to sum to one.
PredictionBundle ensemble_subscores(std::span<const PredictionBundle> bundles,
                                    std::span<const double> model_weights);

// Teacher sub-scores packed as a bundle: a perfect predictor.
PredictionBundle bundle_from_labels(const TeacherLabels& labels, const Eigen::VectorXd& imitation);

// ---- grid search ----------------------------------------------------------

// `count` log-spaced points from lo to hi inclusive; count 1 yields {lo}.
std::vector<double> log_grid(double lo, double hi, int count);

struct GridConfig {
  std::array<std::vector<double>, 4> axes = {log_grid(0.01, 0.1, 4), log_grid(0.1, 1.0, 4),
                                             log_grid(0.1, 1.0, 4), log_grid(1.0, 10.0, 4)};
};

struct ValidationItem {
  const PredictionBundle* bundle = nullptr;
  const TeacherLabels* labels = nullptr;
};

struct GridPoint {
  CostWeights weights;
  double mean_pdm = 0.0;
};

struct GridSearchResult {
  CostWeights best;
  double best_pdm = 0.0;
  std::vector<GridPoint> evaluated;  // lexicographic (w1, w2, w3, w4) order
};

double mean_selected_pdm(std::span<const ValidationItem> items, const CostWeights& w);

// Exhaustive search; the first maximum in lexicographic weight order wins.
GridSearchResult grid_search_weights(std::span<const ValidationItem> items, const GridConfig& grid);

// ---- paradigm A / B baselines ---------------------------------------------

enum class BaselineMode { kA, kB };

// Predicted perception recovered from the (noisy) observation raster: a
// thresholded drivable grid and stationary boxes for agent blobs.
struct PredictedPerception {
  OccupancyGrid drivable;
  std::vector<Agent> agents;
};

PredictedPerception perceive(const Observation& obs, const Pose& ego_pose, double threshold = 0.5);

// Rule-based sub-scores of every vocabulary entry against `world` packed as a
// bundle that keeps the student's imitation scores (paradigm B post-processing).
PredictionBundle post_process_bundle(const PredictionBundle& imitation_bundle, const WorldModel& world,
                                     const Vocabulary& vocab, const Pose& ego_pose,
                                     const MetricsConfig& cfg = {});

// WorldModel over predicted perception. The EP reference is the largest
// route progress any vocabulary entry reaches.
WorldModel perceived_world(const PredictedPerception& p, std::span<const Vec2> route,
                           const Vocabulary& vocab, const Pose& ego_pose);

// Mode A: argmax of the imitation scores. Mode B: assembled cost with the
// metric scores replaced by rule-based scores on `world`.
Selection baseline_select(BaselineMode mode, const PredictionBundle& bundle, const WorldModel& world,
                          const Vocabulary& vocab, const Pose& ego_pose, const CostWeights& w = {},
                          const MetricsConfig& cfg = {});

}  // namespace hydra
