#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/world.hpp"

namespace hydra {

struct KinematicConfig {
  int horizon = 40;
  double dt = 0.1;
  double speed_min = 0.0;
  double speed_max = 14.0;
  double accel_max = 2.0;     // |accel| bound, m/s^2
  double yaw_rate_max = 0.4;  // |yaw rate| bound, rad/s
  int accel_segments = 1;
  int yaw_segments = 2;
  // Caps yaw rate at speed / radius so slow samples cannot spin in place.
  double min_turn_radius = 5.0;

  void validate() const;
};

// Unicycle rollouts from the origin under random piecewise-constant
// (accel, yaw-rate) controls.
std::vector<Trajectory> sample_trajectories(std::size_t n, const KinematicConfig& kin,
                                            std::uint64_t seed);

struct Vocabulary {
  std::vector<Trajectory> trajectories;
  int horizon = 0;
  double dt = 0.1;
  double heading_weight = 1.0;  // metres per radian in the flattened space

  std::size_t size() const { return trajectories.size(); }
  const Trajectory& operator[](std::size_t i) const { return trajectories[i]; }
};

// x, y, heading_weight * heading per timestep.
std::vector<double> flatten(const Trajectory& t, double heading_weight);
void flatten_into(const Trajectory& t, double heading_weight, std::span<double> out);
Trajectory unflatten(std::span<const double> v, double heading_weight, double dt);

double squared_distance(const Trajectory& a, const Trajectory& b, double heading_weight);

struct KMeansOptions {
  std::size_t k = 256;
  int max_iters = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  double heading_weight = 1.0;
};

struct KMeansResult {
  Vocabulary vocabulary;
  // Within-cluster SSE of the partition after every iteration.
  std::vector<double> sse_history;
  double sse = 0.0;
  int iterations = 0;
  std::vector<std::uint32_t> assignment;
};

// k-means++ seeding followed by Lloyd iterations. Once Lloyd stalls, a
// single-point transfer sweep (Hartigan) escapes non-optimal fixed points.
KMeansResult kmeans_cluster(const std::vector<Trajectory>& trajs, const KMeansOptions& opt);

// Same iteration, started from the given centres instead of k-means++.
KMeansResult kmeans_refine(const std::vector<Trajectory>& trajs, const Vocabulary& init,
                           const KMeansOptions& opt);

std::size_t count_distinct(const std::vector<Trajectory>& trajs, double heading_weight);

// Ties resolve to the lowest index.
std::size_t nearest_vocab_index(const Vocabulary& vocab, const Trajectory& traj);

// Binary form: magic "HYVOCAB1", u32 k, u32 H, f64 dt, f64 heading_weight,
// then k*H*(x, y, heading) as f64, all little-endian. The vocabulary hash is
// FNV-1a over exactly these bytes.
std::string encode_vocabulary(const Vocabulary& vocab);
Vocabulary decode_vocabulary(std::string_view bytes);
std::uint64_t vocabulary_hash(const Vocabulary& vocab);

}  // namespace hydra
