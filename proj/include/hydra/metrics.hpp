#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hydra/vocab.hpp"
#include "hydra/world.hpp"

namespace hydra {

inline constexpr std::size_t kNumMetrics = 5;
enum MetricIndex : std::size_t { kNC = 0, kDAC = 1, kTTC = 2, kComfort = 3, kEP = 4 };
inline constexpr std::array<const char*, kNumMetrics> kMetricNames = {"NC", "DAC", "TTC", "C", "EP"};

struct SubScores {
  double nc = 1.0;
  double dac = 1.0;
  double ttc = 1.0;
  double comfort = 1.0;
  double ep = 1.0;

  double operator[](std::size_t m) const {
    switch (m) {
      case kNC: return nc;
      case kDAC: return dac;
      case kTTC: return ttc;
      case kComfort: return comfort;
      default: return ep;
    }
  }
  double& operator[](std::size_t m) {
    switch (m) {
      case kNC: return nc;
      case kDAC: return dac;
      case kTTC: return ttc;
      case kComfort: return comfort;
      default: return ep;
    }
  }
  friend bool operator==(const SubScores&, const SubScores&) = default;
};

struct ComfortLimits {
  double accel_max = 2.4;     // m/s^2
  double jerk_max = 4.0;      // m/s^3
  double yaw_rate_max = 0.95;  // rad/s
};

struct MetricsConfig {
  Footprint ego_footprint;
  double ttc_horizon = 1.0;  // seconds
  ComfortLimits comfort;
  double progress_epsilon = 0.1;  // metres
};

// Grid-shaped drivable area, e.g. a thresholded observation raster. Cells
// are squares of `cell_size` centred as in cell_center(); points outside the
// grid report `outside_value`.
struct OccupancyGrid {
  Pose origin;
  int grid = 0;
  double cell_size = 1.0;
  std::vector<std::uint8_t> cells;  // row-major, 1 = drivable
  bool outside_value = true;

  bool contains(Vec2 world) const;
};

// What the rule-based metrics look at: either the ground truth of a
// Scenario or a predicted stand-in for it.
struct WorldModel {
  const Polygon* polygon = nullptr;
  const OccupancyGrid* grid = nullptr;
  std::span<const Agent> agents;
  std::span<const Vec2> route;
  // Route progress the EP ratio is measured against.
  double reference_progress = 0.0;

  bool drivable(Vec2 p) const { return polygon ? polygon->contains(p) : grid->contains(p); }
};

// Progress along the route between the first and last pose.
double route_progress(std::span<const Vec2> route, const Trajectory& traj);

WorldModel ground_truth_view(const Scenario& scenario);

int no_collision(const WorldModel& world, const Trajectory& traj, const MetricsConfig& cfg);
int drivable_area_compliance(const WorldModel& world, const Trajectory& traj,
                             const MetricsConfig& cfg);
int time_to_collision(const WorldModel& world, const Trajectory& traj, const MetricsConfig& cfg);
double ego_progress(const WorldModel& world, const Trajectory& traj, const MetricsConfig& cfg);
SubScores evaluate_trajectory(const WorldModel& world, const Trajectory& traj,
                              const MetricsConfig& cfg);

int no_collision(const Scenario& scenario, const Trajectory& traj, const MetricsConfig& cfg = {});
int drivable_area_compliance(const Scenario& scenario, const Trajectory& traj,
                             const MetricsConfig& cfg = {});
int time_to_collision(const Scenario& scenario, const Trajectory& traj,
                      const MetricsConfig& cfg = {});
int comfort(const Trajectory& traj, const ComfortLimits& limits = {});
double ego_progress(const Scenario& scenario, const Trajectory& traj,
                    const MetricsConfig& cfg = {});
SubScores evaluate_trajectory(const Scenario& scenario, const Trajectory& traj,
                              const MetricsConfig& cfg = {});

// Per-step longitudinal speed: signed |p[j+1]-p[j]| / dt, the last step
// repeating the one before it.
std::vector<double> step_speeds(const Trajectory& traj);

// nc * dac * (5 ttc + 2 c + 5 ep) / 12
double pdm_score(const SubScores& s);

struct TeacherLabels {
  std::string scenario_id;
  std::uint64_t vocab_hash = 0;
  std::vector<SubScores> scores;
};

// Every vocabulary entry is mapped from the ego frame into the scenario via
// the ego start pose and scored by all five metrics.
TeacherLabels simulate_vocabulary(const Scenario& scenario, const Vocabulary& vocab,
                                  std::uint64_t vocab_hash, const MetricsConfig& cfg = {});

}  // namespace hydra
