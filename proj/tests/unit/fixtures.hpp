// Hand-built scenarios shared by the unit tests.
#pragma once

#include <cmath>

#include "hydra/world.hpp"

namespace fixture {

// Straight road along +x: 10 m wide, from x=-50 to x=150. The expert drives
// at `speed` along the centreline from the origin.
inline hydra::Scenario straight_road(double speed = 5.0, int horizon = 40) {
  using namespace hydra;
  Scenario s;
  s.id = "straight";
  s.drivable_area = Polygon({{-50, -5}, {150, -5}, {150, 5}, {-50, 5}});
  for (double x = -50; x <= 150; x += 2) s.route_centerline.push_back({x, 0});
  s.ego_start = {{0, 0, 0}, speed};
  s.expert_trajectory.dt = 0.1;
  for (int j = 0; j < horizon; ++j) s.expert_trajectory.poses.push_back({speed * 0.1 * j, 0, 0});
  return s;
}

inline hydra::Trajectory straight(double speed, int horizon = 40, double y = 0.0, double x0 = 0.0) {
  hydra::Trajectory t;
  for (int j = 0; j < horizon; ++j) t.poses.push_back({x0 + speed * 0.1 * j, y, 0});
  return t;
}

inline hydra::Trajectory stationary(const hydra::Pose& p, int horizon = 40) {
  hydra::Trajectory t;
  t.poses.assign(static_cast<std::size_t>(horizon), p);
  return t;
}

inline hydra::Agent agent(double x, double y, double heading, double v) {
  hydra::Agent a;
  a.initial_pose = {x, y, heading};
  a.velocity = v;
  return a;
}

}  // namespace fixture

#include <string>

#include "hydra/pipeline.hpp"

namespace fixture {

// A configuration small enough for unit tests: a few dozen scenarios, a
// 24-entry vocabulary and two short training runs.
inline const char* kSmallIni = R"(
[run]
seed = 3
model_seeds = 1, 2
[splits]
train = 30
val = 10
test = 12
[vocab]
samples = 500
k = 24
max_iters = 15
[train]
epochs = 2
batch = 16
[infer]
grid_points = 2
)";

inline hydra::PipelineConfig small_config() { return hydra::parse_config(kSmallIni); }

}  // namespace fixture
