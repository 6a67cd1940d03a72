#include "hydra/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

#include "hydra/common.hpp"
#include "hydra/metrics.hpp"

namespace hydra {

Trajectory to_world(const Trajectory& local, const Pose& origin) {
  Trajectory out;
  out.dt = local.dt;
  out.poses.reserve(local.poses.size());
  for (const Pose& p : local.poses) out.poses.push_back(compose(origin, p));
  return out;
}

Pose agent_pose_at(const Agent& agent, double t) {
  const Pose& p0 = agent.initial_pose;
  const double d = agent.velocity * t;
  return {p0.x + d * std::cos(p0.heading), p0.y + d * std::sin(p0.heading), p0.heading};
}

bool operator==(const Scenario& a, const Scenario& b) {
  return a.id == b.id && a.drivable_area.vertices() == b.drivable_area.vertices() &&
         a.route_centerline == b.route_centerline && a.agents == b.agents &&
         a.ego_start == b.ego_start && a.expert_trajectory == b.expert_trajectory;
}

void WorldConfig::validate() const {
  if (horizon <= 1) throw ConfigError("world: horizon must be > 1");
  if (!(dt > 0.0)) throw ConfigError("world: dt must be positive");
  if (!(road_width_min > 0.0) || road_width_max < road_width_min)
    throw ConfigError("world: road width range must be positive and ordered");
  if (road_width_min <= 2.0 * ego_footprint.half_width)
    throw ConfigError("world: road narrower than the ego footprint");
  if (curvature_max < 0.0 || curvature_max * road_width_max >= 1.0)
    throw ConfigError("world: curvature_max must be >= 0 and below 2/road width");
  if (straight_fraction < 0.0 || straight_fraction > 1.0)
    throw ConfigError("world: straight_fraction must lie in [0,1]");
  if (agents_min < 0 || agents_max < agents_min)
    throw ConfigError("world: agent count range must be non-negative and ordered");
  if (ego_speed_min < 0.0 || ego_speed_max < ego_speed_min)
    throw ConfigError("world: ego speed range must be non-negative and ordered");
  if (agent_speed_max < 0.0) throw ConfigError("world: agent_speed_max must be >= 0");
  if (!(route_spacing > 0.0) || !(route_behind > 0.0) || !(route_ahead > 0.0))
    throw ConfigError("world: route extents must be positive");
  if (route_ahead < ego_speed_max * horizon * dt + 4.0 * ego_footprint.half_length)
    throw ConfigError("world: route_ahead too short for the planning horizon");
  if (!(ego_footprint.half_length > 0.0) || !(ego_footprint.half_width > 0.0))
    throw ConfigError("world: ego footprint extents must be positive");
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return lo == hi ? lo : d(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

// Centerline sampled at fixed arc spacing, with the tangent heading at every
// vertex. Vertex `origin_index` sits at the road-frame origin.
struct Road {
  std::vector<Vec2> points;
  std::vector<double> tangents;
  double width = 0.0;
  std::size_t origin_index = 0;
  double spacing = 0.0;

  // Point and tangent at arc length s measured from the origin vertex.
  Pose at(double s) const {
    const double u = s / spacing + static_cast<double>(origin_index);
    const double clamped = std::clamp(u, 0.0, static_cast<double>(points.size() - 1));
    std::size_t i = static_cast<std::size_t>(clamped);
    if (i + 1 >= points.size()) i = points.size() - 2;
    const double f = clamped - static_cast<double>(i);
    const Vec2 p = points[i] + f * (points[i + 1] - points[i]);
    const double dh = normalize_angle(tangents[i + 1] - tangents[i]);
    // Extrapolate linearly past the ends.
    const double extra = (u - clamped) * spacing;
    const double h = normalize_angle(tangents[i] + f * dh);
    return {p.x + extra * std::cos(h), p.y + extra * std::sin(h), h};
  }
};

void arc_step(double& x, double& y, double& h, double kappa, double ds) {
  if (std::abs(kappa) < 1e-12) {
    x += ds * std::cos(h);
    y += ds * std::sin(h);
  } else {
    const double h2 = h + kappa * ds;
    x += (std::sin(h2) - std::sin(h)) / kappa;
    y += (std::cos(h) - std::cos(h2)) / kappa;
    h = h2;
  }
}

Road make_road(Rng& rng, const WorldConfig& cfg) {
  Road road;
  road.spacing = cfg.route_spacing;
  road.width = uniform(rng, cfg.road_width_min, cfg.road_width_max);
  const bool straight = uniform(rng, 0.0, 1.0) < cfg.straight_fraction;
  const double k1 = straight ? 0.0 : uniform(rng, -cfg.curvature_max, cfg.curvature_max);
  const double k2 = straight ? 0.0 : uniform(rng, -cfg.curvature_max, cfg.curvature_max);
  const double s_switch = uniform(rng, 0.0, 0.5 * cfg.route_ahead);
  const auto kappa = [&](double s) { return s < s_switch ? k1 : k2; };

  const int n_back = static_cast<int>(std::ceil(cfg.route_behind / cfg.route_spacing));
  const int n_fwd = static_cast<int>(std::ceil(cfg.route_ahead / cfg.route_spacing));
  std::vector<Vec2> back;
  std::vector<double> back_h;
  {
    double x = 0, y = 0, h = 0;
    for (int i = 1; i <= n_back; ++i) {
      const double s = -cfg.route_spacing * (i - 0.5);
      arc_step(x, y, h, kappa(s), -cfg.route_spacing);
      back.push_back({x, y});
      back_h.push_back(h);
    }
  }
  for (int i = n_back - 1; i >= 0; --i) {
    road.points.push_back(back[static_cast<std::size_t>(i)]);
    road.tangents.push_back(back_h[static_cast<std::size_t>(i)]);
  }
  road.origin_index = road.points.size();
  double x = 0, y = 0, h = 0;
  road.points.push_back({0.0, 0.0});
  road.tangents.push_back(0.0);
  for (int i = 1; i <= n_fwd; ++i) {
    const double s = cfg.route_spacing * (i - 0.5);
    arc_step(x, y, h, kappa(s), cfg.route_spacing);
    road.points.push_back({x, y});
    road.tangents.push_back(h);
  }
  return road;
}

Polygon road_polygon(const Road& road) {
  std::vector<Vec2> v;
  const double hw = 0.5 * road.width;
  const std::size_t n = road.points.size();
  v.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 left{-std::sin(road.tangents[i]), std::cos(road.tangents[i])};
    v.push_back(road.points[i] - hw * left);
  }
  for (std::size_t i = n; i-- > 0;) {
    const Vec2 left{-std::sin(road.tangents[i]), std::cos(road.tangents[i])};
    v.push_back(road.points[i] + hw * left);
  }
  return Polygon(std::move(v));
}

Footprint vehicle_footprint(Rng& rng) {
  return {uniform(rng, 2.0, 2.6), uniform(rng, 0.85, 1.1)};
}

Agent make_agent(Rng& rng, const Road& road, double ego_speed, const WorldConfig& cfg) {
  const double hw = 0.5 * road.width;
  const double r = uniform(rng, 0.0, 1.0);
  Agent a;
  auto place = [&](double s, double lateral, double dheading) {
    const Pose c = road.at(s);
    a.initial_pose = {c.x - lateral * std::sin(c.heading), c.y + lateral * std::cos(c.heading),
                      normalize_angle(c.heading + dheading)};
  };
  if (r < 0.35) {  // lead vehicle in the ego path
    a.footprint = vehicle_footprint(rng);
    place(uniform(rng, 8.0, 55.0), uniform(rng, -1.0, 1.0), 0.0);
    const bool stopped = uniform(rng, 0.0, 1.0) < 0.3;
    a.velocity = stopped ? 0.0 : uniform(rng, 0.0, std::max(0.0, ego_speed - 1.0));
  } else if (r < 0.6) {  // parked at the road edge
    a.footprint = vehicle_footprint(rng);
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    place(uniform(rng, 5.0, 70.0), side * (hw - uniform(rng, 0.9, 1.3)), 0.0);
    a.velocity = 0.0;
  } else if (r < 0.8) {  // crossing road user
    a.footprint = {uniform(rng, 0.3, 0.9), uniform(rng, 0.3, 0.5)};
    const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    place(uniform(rng, 10.0, 45.0), side * (hw + uniform(rng, -1.0, 4.0)),
          -side * 0.5 * std::numbers::pi);
    a.velocity = uniform(rng, 0.8, 2.5);
  } else {  // follower
    a.footprint = vehicle_footprint(rng);
    place(uniform(rng, -14.0, -8.0), uniform(rng, -0.8, 0.8), 0.0);
    a.velocity = ego_speed * uniform(rng, 0.8, 1.1);
  }
  a.velocity = std::min(a.velocity, cfg.agent_speed_max);
  return a;
}

OrientedBox inflated(OrientedBox b, double margin) {
  b.half_length += margin;
  b.half_width += margin;
  return b;
}

bool footprint_inside(const Polygon& poly, const Pose& p, const Footprint& f) {
  if (!poly.contains(p.position())) return false;
  for (const Vec2& c : OrientedBox::at(p, f).corners())
    if (!poly.contains(c)) return false;
  return true;
}

// Point on the polyline at arc length s (clamped to its extent).
Vec2 point_at_arc(const std::vector<Vec2>& line, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double len = norm(line[i + 1] - line[i]);
    if (acc + len >= s) {
      const double f = len > 0.0 ? std::max(0.0, s - acc) / len : 0.0;
      return line[i] + f * (line[i + 1] - line[i]);
    }
    acc += len;
  }
  return line.back();
}

// Pure pursuit along the centerline with IDM-style gap keeping to in-path
// agents. Acceleration, jerk and yaw rate stay inside the configured limits.
Trajectory drive_expert(const Road& road, const std::vector<Agent>& agents, const EgoState& start,
                        const WorldConfig& cfg) {
  Trajectory traj;
  traj.dt = cfg.dt;
  traj.poses.reserve(static_cast<std::size_t>(cfg.horizon));
  Pose pose = start.pose;
  double v = start.speed;
  const double v_des = std::max(start.speed, 1.0);
  double a_prev = 0.0;
  const double dt = cfg.dt;
  const Footprint& ego = cfg.ego_footprint;
  constexpr double kAnticipation = 2.0;  // seconds
  traj.poses.push_back(pose);
  for (int j = 0; j + 1 < cfg.horizon; ++j) {
    const double t = j * dt;
    const PolylineProjection me = project_onto_polyline(road.points, pose.position());

    double gap = std::numeric_limits<double>::infinity();
    double lead_speed = 0.0;
    // Agents count as leads if they occupy the ego corridor now or within
    // the anticipation window.
    for (const Agent& a : agents) {
      const double reach = std::max(a.footprint.half_length, a.footprint.half_width);
      for (double ahead = 0.0; ahead <= kAnticipation + 1e-9; ahead += 0.5) {
        const Pose ap = agent_pose_at(a, t + ahead);
        const PolylineProjection pa = project_onto_polyline(road.points, ap.position());
        if (pa.arc_length <= me.arc_length) continue;
        if (std::abs(pa.lateral - me.lateral) >= ego.half_width + reach + 0.4) continue;
        const double g = pa.arc_length - me.arc_length - ego.half_length - reach;
        if (g < gap) {
          gap = g;
          lead_speed = a.velocity * std::cos(ap.heading - pa.tangent);
        }
        break;
      }
    }

    constexpr double kComfortDecel = 2.0;
    double accel = cfg.expert_accel_max * (1.0 - std::pow(v / v_des, 4));
    if (std::isfinite(gap)) {
      const double s_star = 2.0 + 1.2 * v +
                            v * (v - lead_speed) / (2.0 * std::sqrt(cfg.expert_accel_max * kComfortDecel));
      const double g = std::max(gap, 0.1);
      accel -= cfg.expert_accel_max * (std::max(s_star, 0.0) / g) * (std::max(s_star, 0.0) / g);
    }
    accel = std::clamp(accel, -cfg.expert_decel_max, cfg.expert_accel_max);
    accel = std::clamp(accel, a_prev - cfg.expert_jerk_max * dt, a_prev + cfg.expert_jerk_max * dt);
    if (v + accel * dt < 0.0) accel = -v / dt;

    const double lookahead = std::max(4.0, 1.0 * v);
    const Vec2 target = point_at_arc(road.points, me.arc_length + lookahead);
    const Pose rel = relative(pose, {target.x, target.y, 0.0});
    const double alpha = std::atan2(rel.y, rel.x);
    double omega = v * 2.0 * std::sin(alpha) / lookahead;
    omega = std::clamp(omega, -cfg.expert_yaw_rate_max, cfg.expert_yaw_rate_max);

    const double dist = (v + 0.5 * accel * dt) * dt;
    const double mid = pose.heading + 0.5 * omega * dt;
    pose = {pose.x + dist * std::cos(mid), pose.y + dist * std::sin(mid),
            normalize_angle(pose.heading + omega * dt)};
    v = std::max(0.0, v + accel * dt);
    a_prev = accel;
    traj.poses.push_back(pose);
  }
  return traj;
}

std::optional<Scenario> attempt(Rng& rng, const WorldConfig& cfg) {
  const Road road = make_road(rng, cfg);
  Polygon poly = road_polygon(road);
  if (!poly.is_simple()) return std::nullopt;

  EgoState ego;
  ego.speed = uniform(rng, cfg.ego_speed_min, cfg.ego_speed_max);
  ego.pose = {0.0, uniform(rng, -0.5, 0.5), uniform(rng, -0.05, 0.05)};
  const OrientedBox ego_box = OrientedBox::at(ego.pose, cfg.ego_footprint);

  const int n_agents = uniform_int(rng, cfg.agents_min, cfg.agents_max);
  std::vector<Agent> agents;
  for (int i = 0; i < n_agents; ++i) {
    bool placed = false;
    for (int tries = 0; tries < 50 && !placed; ++tries) {
      Agent a = make_agent(rng, road, ego.speed, cfg);
      const OrientedBox box = OrientedBox::at(a.initial_pose, a.footprint);
      bool clear = !boxes_intersect(inflated(ego_box, 0.5), box);
      for (const Agent& other : agents)
        clear = clear && !boxes_intersect(inflated(box, 0.3),
                                          OrientedBox::at(other.initial_pose, other.footprint));
      if (clear) {
        agents.push_back(a);
        placed = true;
      }
    }
    if (!placed) return std::nullopt;
  }

  Trajectory expert = drive_expert(road, agents, ego, cfg);
  for (const Pose& p : expert.poses)
    if (!footprint_inside(poly, p, cfg.ego_footprint)) return std::nullopt;
  // Demonstrations must be collision-free and comfortable.
  for (std::size_t j = 0; j < expert.poses.size(); ++j) {
    const OrientedBox box = OrientedBox::at(expert.poses[j], cfg.ego_footprint);
    for (const Agent& a : agents)
      if (boxes_intersect(box, OrientedBox::at(agent_pose_at(a, j * cfg.dt), a.footprint)))
        return std::nullopt;
  }
  if (!comfort(expert)) return std::nullopt;

  // Place the whole scene at a random global pose.
  const Pose frame{uniform(rng, -500.0, 500.0), uniform(rng, -500.0, 500.0),
                   uniform(rng, -std::numbers::pi, std::numbers::pi)};
  Scenario sc;
  std::vector<Vec2> verts;
  verts.reserve(poly.size());
  for (const Vec2& p : poly.vertices()) verts.push_back(to_world(frame, p));
  sc.drivable_area = Polygon(std::move(verts));
  for (const Vec2& p : road.points) sc.route_centerline.push_back(to_world(frame, p));
  for (Agent a : agents) {
    a.initial_pose = compose(frame, a.initial_pose);
    sc.agents.push_back(a);
  }
  sc.expert_trajectory = to_world(expert, frame);
  sc.ego_start = {sc.expert_trajectory.poses.front(), ego.speed};

  // Rounding in the global transform must not break containment.
  for (const Pose& p : sc.expert_trajectory.poses) {
    if (!footprint_inside(sc.drivable_area, p, cfg.ego_footprint)) return std::nullopt;
    if (sc.drivable_area.boundary_distance(p.position()) < 1e-6) return std::nullopt;
  }
  if (!sc.drivable_area.is_simple()) return std::nullopt;
  return sc;
}

}  // namespace

Scenario generate_scenario(std::uint64_t seed, const WorldConfig& config) {
  config.validate();
  Rng rng(seed);
  for (int tries = 0; tries < 200; ++tries) {
    if (auto sc = attempt(rng, config)) {
      sc->id = "scn-" + std::to_string(seed);
      return std::move(*sc);
    }
  }
  throw ConfigError("world: could not generate a valid scenario for seed " +
                    std::to_string(seed) + "; configuration too restrictive");
}

void RasterConfig::validate() const {
  if (grid < 16) throw ConfigError("raster: grid must be >= 16");
  if (!(cell_size > 0.0)) throw ConfigError("raster: cell size must be positive");
}

Vec2 cell_center(const RasterConfig& rc, int row, int col) {
  const double half = 0.5 * rc.grid;
  return {(row + 0.5 - half) * rc.cell_size, (col + 0.5 - half) * rc.cell_size};
}

Observation render_observation(const Scenario& scenario, const RasterConfig& raster,
                               const NoiseConfig& noise, std::uint64_t seed) {
  raster.validate();
  Observation obs;
  obs.grid = raster.grid;
  obs.cell_size = raster.cell_size;
  const std::size_t g = static_cast<std::size_t>(raster.grid);
  obs.raster.assign(g * g * 2, 0.0);
  const Pose& ego = scenario.ego_start.pose;

  std::vector<Pose> agent_poses;
  for (const Agent& a : scenario.agents) agent_poses.push_back(agent_pose_at(a, 0.0));

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 0; r < raster.grid; ++r) {
    for (int c = 0; c < raster.grid; ++c) {
      const Vec2 world = to_world(ego, cell_center(raster, r, c));
      double base[2];
      base[0] = scenario.drivable_area.contains(world) ? 1.0 : 0.0;
      base[1] = 0.0;
      for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
        const Pose rel = relative(agent_poses[i], {world.x, world.y, 0.0});
        const Footprint& f = scenario.agents[i].footprint;
        if (std::abs(rel.x) <= f.half_length && std::abs(rel.y) <= f.half_width) {
          base[1] = 1.0;
          break;
        }
      }
      for (int ch = 0; ch < 2; ++ch) {
        const double u_drop = unit(rng);
        const double u_add = unit(rng);
        double v = u_drop < noise.dropout ? 0.0 : base[ch];
        v += (2.0 * u_add - 1.0) * noise.additive;
        obs.raster[(static_cast<std::size_t>(r) * g + static_cast<std::size_t>(c)) * 2 +
                   static_cast<std::size_t>(ch)] = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  const PolylineProjection pr = project_onto_polyline(scenario.route_centerline, ego.position());
  double yaw_rate = 0.0;
  const auto& poses = scenario.expert_trajectory.poses;
  if (poses.size() >= 2)
    yaw_rate = normalize_angle(poses[1].heading - poses[0].heading) / scenario.expert_trajectory.dt;
  obs.ego_status = {scenario.ego_start.speed, yaw_rate, normalize_angle(ego.heading - pr.tangent),
                    pr.lateral};
  return obs;
}

}  // namespace hydra
