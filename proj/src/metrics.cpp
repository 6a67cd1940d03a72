#include "hydra/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "hydra/common.hpp"

namespace hydra {

namespace {

// Inclusive comparisons tolerate rounding in finite differences.
constexpr double kBoundSlack = 1e-9;

bool within(double value, double limit) { return std::abs(value) <= limit * (1.0 + kBoundSlack); }

double bounding_radius(double hl, double hw) { return std::hypot(hl, hw); }

bool collides(const OrientedBox& ego, double ego_r, const Agent& agent, double t) {
  const Pose ap = agent_pose_at(agent, t);
  const double r = bounding_radius(agent.footprint.half_length, agent.footprint.half_width);
  if (norm(ap.position() - ego.center) > ego_r + r) return false;
  return boxes_intersect(ego, OrientedBox::at(ap, agent.footprint));
}

}  // namespace

bool OccupancyGrid::contains(Vec2 world) const {
  const Pose rel = relative(origin, {world.x, world.y, 0.0});
  const double half = 0.5 * grid;
  const double fr = rel.x / cell_size + half;
  const double fc = rel.y / cell_size + half;
  if (fr < 0.0 || fc < 0.0 || fr >= grid || fc >= grid) return outside_value;
  const auto r = static_cast<std::size_t>(fr);
  const auto c = static_cast<std::size_t>(fc);
  return cells[r * static_cast<std::size_t>(grid) + c] != 0;
}

double route_progress(std::span<const Vec2> route, const Trajectory& traj) {
  const double s0 = project_onto_polyline(route, traj.poses.front().position()).arc_length;
  const double s1 = project_onto_polyline(route, traj.poses.back().position()).arc_length;
  return s1 - s0;
}

WorldModel ground_truth_view(const Scenario& scenario) {
  WorldModel w;
  w.polygon = &scenario.drivable_area;
  w.agents = scenario.agents;
  w.route = scenario.route_centerline;
  w.reference_progress = route_progress(scenario.route_centerline, scenario.expert_trajectory);
  return w;
}

std::vector<double> step_speeds(const Trajectory& traj) {
  const std::size_t h = traj.poses.size();
  std::vector<double> v(h, 0.0);
  for (std::size_t j = 0; j + 1 < h; ++j) {
    const Vec2 d = traj.poses[j + 1].position() - traj.poses[j].position();
    const Vec2 f{std::cos(traj.poses[j].heading), std::sin(traj.poses[j].heading)};
    const double mag = norm(d) / traj.dt;
    v[j] = dot(d, f) < 0.0 ? -mag : mag;
  }
  if (h >= 2) v[h - 1] = v[h - 2];
  return v;
}

int no_collision(const WorldModel& world, const Trajectory& traj, const MetricsConfig& cfg) {
  const double ego_r = bounding_radius(cfg.ego_footprint.half_length, cfg.ego_footprint.half_width);
  for (std::size_t j = 0; j < traj.poses.size(); ++j) {
    const OrientedBox ego = OrientedBox::at(traj.poses[j], cfg.ego_footprint);
    const double t = static_cast<double>(j) * traj.dt;
    for (const Agent& a : world.agents)
      if (collides(ego, ego_r, a, t)) return 0;
  }
  return 1;
}

int drivable_area_compliance(const WorldModel& world, const Trajectory& traj,
                             const MetricsConfig& cfg) {
  for (const Pose& p : traj.poses)
    for (const Vec2& c : OrientedBox::at(p, cfg.ego_footprint).corners())
      if (!world.drivable(c)) return 0;
  return 1;
}

int time_to_collision(const WorldModel& world, const Trajectory& traj, const MetricsConfig& cfg) {
  if (!(cfg.ttc_horizon > 0.0)) throw ConfigError("ttc: horizon must be positive");
  if (world.agents.empty()) return 1;
  const double ego_r = bounding_radius(cfg.ego_footprint.half_length, cfg.ego_footprint.half_width);
  const std::vector<double> speed = step_speeds(traj);
  const int steps = static_cast<int>(std::lround(cfg.ttc_horizon / traj.dt));
  for (std::size_t j = 0; j < traj.poses.size(); ++j) {
    const Pose& p = traj.poses[j];
    const double t0 = static_cast<double>(j) * traj.dt;
    const Vec2 f{std::cos(p.heading), std::sin(p.heading)};
    for (int s = 0; s <= steps; ++s) {
      const double tau = s * traj.dt;
      const Pose q{p.x + speed[j] * tau * f.x, p.y + speed[j] * tau * f.y, p.heading};
      const OrientedBox ego = OrientedBox::at(q, cfg.ego_footprint);
      for (const Agent& a : world.agents)
        if (collides(ego, ego_r, a, t0 + tau)) return 0;
    }
  }
  return 1;
}

int comfort(const Trajectory& traj, const ComfortLimits& limits) {
  if (!(limits.accel_max > 0.0) || !(limits.jerk_max > 0.0) || !(limits.yaw_rate_max > 0.0))
    throw ConfigError("comfort: limits must be positive");
  const std::size_t h = traj.poses.size();
  if (h < 2) return 1;
  const double dt = traj.dt;
  std::vector<double> v(h - 1);
  for (std::size_t j = 0; j + 1 < h; ++j) {
    const Vec2 d = traj.poses[j + 1].position() - traj.poses[j].position();
    const Vec2 f{std::cos(traj.poses[j].heading), std::sin(traj.poses[j].heading)};
    const double mag = norm(d) / dt;
    v[j] = dot(d, f) < 0.0 ? -mag : mag;
    const double yaw_rate = normalize_angle(traj.poses[j + 1].heading - traj.poses[j].heading) / dt;
    if (!within(yaw_rate, limits.yaw_rate_max)) return 0;
  }
  std::vector<double> a;
  for (std::size_t j = 0; j + 1 < v.size(); ++j) {
    a.push_back((v[j + 1] - v[j]) / dt);
    if (!within(a.back(), limits.accel_max)) return 0;
  }
  for (std::size_t j = 0; j + 1 < a.size(); ++j)
    if (!within((a[j + 1] - a[j]) / dt, limits.jerk_max)) return 0;
  return 1;
}

double ego_progress(const WorldModel& world, const Trajectory& traj, const MetricsConfig& cfg) {
  if (world.route.size() < 2) throw ConfigError("ego_progress: route needs >= 2 vertices");
  if (world.reference_progress <= cfg.progress_epsilon) return 1.0;
  return std::clamp(route_progress(world.route, traj) / world.reference_progress, 0.0, 1.0);
}

SubScores evaluate_trajectory(const WorldModel& world, const Trajectory& traj,
                              const MetricsConfig& cfg) {
  SubScores s;
  s.nc = no_collision(world, traj, cfg);
  s.dac = drivable_area_compliance(world, traj, cfg);
  s.ttc = time_to_collision(world, traj, cfg);
  s.comfort = comfort(traj, cfg.comfort);
  s.ep = ego_progress(world, traj, cfg);
  return s;
}

int no_collision(const Scenario& scenario, const Trajectory& traj, const MetricsConfig& cfg) {
  return no_collision(ground_truth_view(scenario), traj, cfg);
}
int drivable_area_compliance(const Scenario& scenario, const Trajectory& traj,
                             const MetricsConfig& cfg) {
  return drivable_area_compliance(ground_truth_view(scenario), traj, cfg);
}
int time_to_collision(const Scenario& scenario, const Trajectory& traj, const MetricsConfig& cfg) {
  return time_to_collision(ground_truth_view(scenario), traj, cfg);
}
double ego_progress(const Scenario& scenario, const Trajectory& traj, const MetricsConfig& cfg) {
  return ego_progress(ground_truth_view(scenario), traj, cfg);
}
SubScores evaluate_trajectory(const Scenario& scenario, const Trajectory& traj,
                              const MetricsConfig& cfg) {
  return evaluate_trajectory(ground_truth_view(scenario), traj, cfg);
}

double pdm_score(const SubScores& s) {
  return s.nc * s.dac * (5.0 * s.ttc + 2.0 * s.comfort + 5.0 * s.ep) / 12.0;
}

TeacherLabels simulate_vocabulary(const Scenario& scenario, const Vocabulary& vocab,
                                  std::uint64_t vocab_hash, const MetricsConfig& cfg) {
  if (vocab.size() == 0) throw ConfigError("simulate_vocabulary: empty vocabulary");
  TeacherLabels labels;
  labels.scenario_id = scenario.id;
  labels.vocab_hash = vocab_hash;
  labels.scores.resize(vocab.size());
  const WorldModel world = ground_truth_view(scenario);
  parallel_for(vocab.size(), [&](std::size_t i) {
    labels.scores[i] = evaluate_trajectory(world, to_world(vocab[i], scenario.ego_start.pose), cfg);
  });
  return labels;
}

}  // namespace hydra
