#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hydra/geometry.hpp"

namespace hydra {

struct Trajectory {
  std::vector<Pose> poses;
  double dt = 0.1;

  std::size_t horizon() const { return poses.size(); }
  double duration() const { return static_cast<double>(poses.size()) * dt; }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// Rigidly maps an ego-frame trajectory into the world frame of `origin`.
Trajectory to_world(const Trajectory& local, const Pose& origin);

struct Agent {
  Pose initial_pose;
  double velocity = 0.0;  // m/s along the initial heading, signed
  Footprint footprint;
  friend bool operator==(const Agent&, const Agent&) = default;
};

// Constant-velocity motion along the initial heading.
Pose agent_pose_at(const Agent& agent, double t);

struct EgoState {
  Pose pose;
  double speed = 0.0;
  friend bool operator==(const EgoState&, const EgoState&) = default;
};

struct Scenario {
  std::string id;
  Polygon drivable_area;
  std::vector<Vec2> route_centerline;
  std::vector<Agent> agents;
  EgoState ego_start;
  Trajectory expert_trajectory;
};

bool operator==(const Scenario& a, const Scenario& b);

struct WorldConfig {
  int horizon = 40;
  double dt = 0.1;
  double road_width_min = 7.0;
  double road_width_max = 10.0;
  double curvature_max = 0.02;  // 1/m
  double straight_fraction = 0.3;
  int agents_min = 0;
  int agents_max = 6;
  double ego_speed_min = 2.0;
  double ego_speed_max = 12.0;
  double agent_speed_max = 10.0;
  double route_behind = 16.0;
  double route_ahead = 92.0;
  double route_spacing = 2.0;
  Footprint ego_footprint;

  // Expert controller limits; kept inside the comfort thresholds.
  double expert_accel_max = 1.5;
  double expert_decel_max = 2.2;
  double expert_jerk_max = 3.5;
  double expert_yaw_rate_max = 0.9;

  // Throws ConfigError on invalid settings.
  void validate() const;
};

Scenario generate_scenario(std::uint64_t seed, const WorldConfig& config);

struct NoiseConfig {
  double dropout = 0.3;   // per-cell probability of zeroing
  double additive = 0.1;  // half-width of the uniform additive term
};

struct RasterConfig {
  int grid = 40;
  double cell_size = 2.0;
  void validate() const;
};

inline constexpr int kEgoStatusDim = 4;

struct Observation {
  int grid = 0;
  double cell_size = 0.0;
  // grid x grid x 2, index ((row * grid) + col) * 2 + channel. Row runs along
  // the ego heading, col to the ego's left.
  std::vector<double> raster;
  // speed, yaw rate, route-relative heading error, signed lateral offset.
  std::array<double, kEgoStatusDim> ego_status{};

  double at(int row, int col, int channel) const {
    return raster[(static_cast<std::size_t>(row) * grid + col) * 2 + channel];
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

// Ego-frame center of raster cell (row, col).
Vec2 cell_center(const RasterConfig& rc, int row, int col);

Observation render_observation(const Scenario& scenario, const RasterConfig& raster,
                               const NoiseConfig& noise, std::uint64_t seed);

}  // namespace hydra
