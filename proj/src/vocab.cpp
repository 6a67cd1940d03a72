#include "hydra/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <cstring>
#include <random>

#include "hydra/common.hpp"

namespace hydra {

void KinematicConfig::validate() const {
  if (horizon <= 1) throw ConfigError("kinematics: horizon must be > 1");
  if (!(dt > 0.0)) throw ConfigError("kinematics: dt must be positive");
  if (speed_min < 0.0 || speed_max < speed_min)
    throw ConfigError("kinematics: speed range must be non-negative and ordered");
  if (accel_max < 0.0 || yaw_rate_max < 0.0)
    throw ConfigError("kinematics: control bounds must be non-negative");
  if (accel_segments < 1 || yaw_segments < 1)
    throw ConfigError("kinematics: segment counts must be >= 1");
  if (!(min_turn_radius > 0.0)) throw ConfigError("kinematics: min_turn_radius must be positive");
}

namespace {

double draw(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

}  // namespace

std::vector<Trajectory> sample_trajectories(std::size_t n, const KinematicConfig& kin,
                                            std::uint64_t seed) {
  kin.validate();
  if (n == 0) throw ConfigError("sample_trajectories: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Trajectory> out;
  out.reserve(n);
  const int steps = kin.horizon - 1;
  std::vector<double> accels, yaws;
  for (std::size_t s = 0; s < n; ++s) {
    double v = draw(rng, kin.speed_min, kin.speed_max);
    accels.clear();
    yaws.clear();
    for (int i = 0; i < kin.accel_segments; ++i) accels.push_back(draw(rng, -kin.accel_max, kin.accel_max));
    for (int i = 0; i < kin.yaw_segments; ++i) yaws.push_back(draw(rng, -kin.yaw_rate_max, kin.yaw_rate_max));

    Trajectory t;
    t.dt = kin.dt;
    t.poses.reserve(static_cast<std::size_t>(kin.horizon));
    Pose p{0.0, 0.0, 0.0};
    t.poses.push_back(p);
    for (int j = 0; j < steps; ++j) {
      double a = accels[static_cast<std::size_t>(j * kin.accel_segments / steps)];
      const double w = yaws[static_cast<std::size_t>(j * kin.yaw_segments / steps)];
      if (v + a * kin.dt < 0.0) a = -v / kin.dt;
      const double v_mid = v + 0.5 * a * kin.dt;
      const double w_cap = std::min(kin.yaw_rate_max, v_mid / kin.min_turn_radius);
      const double omega = std::clamp(w, -w_cap, w_cap);
      const double mid = p.heading + 0.5 * omega * kin.dt;
      const double dist = v_mid * kin.dt;
      p = {p.x + dist * std::cos(mid), p.y + dist * std::sin(mid),
           normalize_angle(p.heading + omega * kin.dt)};
      v = std::max(0.0, v + a * kin.dt);
      t.poses.push_back(p);
    }
    out.push_back(std::move(t));
  }
  return out;
}

void flatten_into(const Trajectory& t, double heading_weight, std::span<double> out) {
  for (std::size_t i = 0; i < t.poses.size(); ++i) {
    out[3 * i] = t.poses[i].x;
    out[3 * i + 1] = t.poses[i].y;
    out[3 * i + 2] = heading_weight * t.poses[i].heading;
  }
}

std::vector<double> flatten(const Trajectory& t, double heading_weight) {
  std::vector<double> v(3 * t.poses.size());
  flatten_into(t, heading_weight, v);
  return v;
}

Trajectory unflatten(std::span<const double> v, double heading_weight, double dt) {
  Trajectory t;
  t.dt = dt;
  const std::size_t h = v.size() / 3;
  t.poses.reserve(h);
  for (std::size_t i = 0; i < h; ++i)
    t.poses.push_back({v[3 * i], v[3 * i + 1], normalize_angle(v[3 * i + 2] / heading_weight)});
  return t;
}

double squared_distance(const Trajectory& a, const Trajectory& b, double heading_weight) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.poses.size(); ++i) {
    const double dx = a.poses[i].x - b.poses[i].x;
    const double dy = a.poses[i].y - b.poses[i].y;
    const double dh = heading_weight * (a.poses[i].heading - b.poses[i].heading);
    s += dx * dx + dy * dy + dh * dh;
  }
  return s;
}

namespace {

// Row-major point set.
struct Points {
  std::vector<double> data;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

Points to_points(const std::vector<Trajectory>& trajs, double heading_weight) {
  Points p;
  p.n = trajs.size();
  p.dim = trajs.empty() ? 0 : 3 * trajs.front().poses.size();
  p.data.resize(p.n * p.dim);
  for (std::size_t i = 0; i < p.n; ++i) {
    if (3 * trajs[i].poses.size() != p.dim)
      throw ConfigError("kmeans: trajectories must share one horizon");
    flatten_into(trajs[i], heading_weight, {p.data.data() + i * p.dim, p.dim});
  }
  return p;
}

double sqdist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

// Partial distance with early exit once `bound` is exceeded.
double sqdist_bounded(const double* a, const double* b, std::size_t dim, double bound) {
  double s = 0.0;
  std::size_t d = 0;
  for (; d + 8 <= dim; d += 8) {
    for (std::size_t e = 0; e < 8; ++e) {
      const double t = a[d + e] - b[d + e];
      s += t * t;
    }
    if (s > bound) return s;
  }
  for (; d < dim; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

std::size_t distinct_rows(const Points& p) {
  std::vector<std::size_t> idx(p.n);
  std::iota(idx.begin(), idx.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) {
    const auto ra = p.row(a);
    const auto rb = p.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t count = p.n == 0 ? 0 : 1;
  for (std::size_t i = 1; i < p.n; ++i) {
    const auto ra = p.row(idx[i - 1]);
    const auto rb = p.row(idx[i]);
    if (!std::equal(ra.begin(), ra.end(), rb.begin())) ++count;
  }
  return count;
}

std::vector<double> kmeanspp_seed(const Points& p, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> centers(k * p.dim);
  std::uniform_int_distribution<std::size_t> pick(0, p.n - 1);
  std::size_t first = pick(rng);
  std::copy_n(p.row(first).begin(), p.dim, centers.begin());
  std::vector<double> d2(p.n);
  for (std::size_t i = 0; i < p.n; ++i) d2[i] = sqdist(p.row(i), p.row(first));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    const double target = unit(rng) * total;
    double acc = 0.0;
    std::size_t chosen = p.n;
    std::size_t last_positive = p.n;
    for (std::size_t i = 0; i < p.n; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      acc += d2[i];
      if (acc > target) {
        chosen = i;
        break;
      }
    }
    if (chosen == p.n) chosen = last_positive;
    if (chosen == p.n) throw ConfigError("kmeans: fewer distinct points than k");
    std::copy_n(p.row(chosen).begin(), p.dim, centers.begin() + static_cast<std::ptrdiff_t>(c * p.dim));
    const std::span<const double> cc(centers.data() + c * p.dim, p.dim);
    for (std::size_t i = 0; i < p.n; ++i) d2[i] = std::min(d2[i], sqdist(p.row(i), cc));
  }
  return centers;
}

void assign_nearest(const Points& p, const std::vector<double>& centers, std::size_t k,
                    std::vector<std::uint32_t>& assignment) {
  parallel_for(p.n, [&](std::size_t i) {
    const double* x = p.data.data() + i * p.dim;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = sqdist_bounded(x, centers.data() + c * p.dim, p.dim, best);
      if (d < best) {
        best = d;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    assignment[i] = arg;
  });
}

void compute_means(const Points& p, const std::vector<std::uint32_t>& assignment, std::size_t k,
                   std::vector<double>& centers, std::vector<std::size_t>& counts) {
  std::fill(centers.begin(), centers.end(), 0.0);
  counts.assign(k, 0);
  for (std::size_t i = 0; i < p.n; ++i) {
    const std::size_t c = assignment[i];
    ++counts[c];
    double* dst = centers.data() + c * p.dim;
    const double* x = p.data.data() + i * p.dim;
    for (std::size_t d = 0; d < p.dim; ++d) dst[d] += x[d];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[c]);
    double* dst = centers.data() + c * p.dim;
    for (std::size_t d = 0; d < p.dim; ++d) dst[d] *= inv;
  }
}

double partition_sse(const Points& p, const std::vector<std::uint32_t>& assignment,
                     const std::vector<double>& centers) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.n; ++i)
    s += sqdist(p.row(i), {centers.data() + assignment[i] * p.dim, p.dim});
  return s;
}

// Moves the point farthest from its centre in the largest cluster into each
// empty cluster. Returns true if anything moved.
bool repair_empty(const Points& p, std::vector<std::uint32_t>& assignment, std::size_t k,
                  std::vector<double>& centers, std::vector<std::size_t>& counts) {
  bool moved = false;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    const std::size_t largest = static_cast<std::size_t>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::size_t far = p.n;
    double far_d = -1.0;
    for (std::size_t i = 0; i < p.n; ++i) {
      if (assignment[i] != largest) continue;
      const double d = sqdist(p.row(i), {centers.data() + largest * p.dim, p.dim});
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    assignment[far] = static_cast<std::uint32_t>(c);
    --counts[largest];
    counts[c] = 1;
    compute_means(p, assignment, k, centers, counts);
    moved = true;
  }
  return moved;
}

// One sequential pass of single-point transfers that strictly lower the SSE
// (Hartigan-Wong criterion). Centres are kept as exact means afterwards.
bool transfer_sweep(const Points& p, std::vector<std::uint32_t>& assignment, std::size_t k,
                    std::vector<double>& centers, std::vector<std::size_t>& counts) {
  bool any = false;
  for (std::size_t i = 0; i < p.n; ++i) {
    const std::size_t a = assignment[i];
    if (counts[a] <= 1) continue;
    const double* x = p.data.data() + i * p.dim;
    const double na = static_cast<double>(counts[a]);
    const double remove_gain = na / (na - 1.0) * sqdist_bounded(x, centers.data() + a * p.dim, p.dim,
                                                                 std::numeric_limits<double>::infinity());
    double best_cost = remove_gain;
    std::size_t best = a;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == a) continue;
      const double nc = static_cast<double>(counts[c]);
      const double scale = nc / (nc + 1.0);
      const double d = sqdist_bounded(x, centers.data() + c * p.dim, p.dim, best_cost / scale);
      if (scale * d < best_cost) {
        best_cost = scale * d;
        best = c;
      }
    }
    // Require a margin well above rounding so the pass cannot cycle.
    if (best == a || best_cost >= remove_gain * (1.0 - 1e-9)) continue;
    double* ca = centers.data() + a * p.dim;
    double* cb = centers.data() + best * p.dim;
    const double nb = static_cast<double>(counts[best]);
    for (std::size_t d = 0; d < p.dim; ++d) {
      ca[d] = (na * ca[d] - x[d]) / (na - 1.0);
      cb[d] = (nb * cb[d] + x[d]) / (nb + 1.0);
    }
    --counts[a];
    ++counts[best];
    assignment[i] = static_cast<std::uint32_t>(best);
    any = true;
  }
  if (any) compute_means(p, assignment, k, centers, counts);
  return any;
}

KMeansResult run_kmeans(const Points& p, std::vector<double> centers, const KMeansOptions& opt,
                        double dt) {
  const std::size_t k = opt.k;
  KMeansResult res;
  std::vector<std::uint32_t> assignment(p.n, 0);
  std::vector<std::size_t> counts(k, 0);
  std::vector<double> next(centers.size());
  int it = 0;
  for (; it < opt.max_iters; ++it) {
    assign_nearest(p, centers, k, assignment);
    compute_means(p, assignment, k, next, counts);
    repair_empty(p, assignment, k, next, counts);
    double movement = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      movement = std::max(movement, std::sqrt(sqdist({centers.data() + c * p.dim, p.dim},
                                                     {next.data() + c * p.dim, p.dim})));
    centers.swap(next);
    res.sse_history.push_back(partition_sse(p, assignment, centers));
    if (movement <= opt.tol) {
      if (!transfer_sweep(p, assignment, k, centers, counts)) {
        ++it;
        break;
      }
      if (++it >= opt.max_iters) {
        res.sse_history.push_back(partition_sse(p, assignment, centers));
        break;
      }
      res.sse_history.push_back(partition_sse(p, assignment, centers));
    }
  }
  res.iterations = it;
  res.assignment = std::move(assignment);
  res.sse = res.sse_history.empty() ? 0.0 : res.sse_history.back();
  res.vocabulary.heading_weight = opt.heading_weight;
  res.vocabulary.dt = dt;
  res.vocabulary.horizon = static_cast<int>(p.dim / 3);
  for (std::size_t c = 0; c < k; ++c)
    res.vocabulary.trajectories.push_back(
        unflatten({centers.data() + c * p.dim, p.dim}, opt.heading_weight, dt));
  return res;
}

void check_options(const std::vector<Trajectory>& trajs, const KMeansOptions& opt) {
  if (trajs.empty()) throw ConfigError("kmeans: empty input");
  if (opt.k == 0) throw ConfigError("kmeans: k must be >= 1");
  if (opt.max_iters < 1) throw ConfigError("kmeans: max_iters must be >= 1");
  if (!(opt.tol >= 0.0)) throw ConfigError("kmeans: tol must be >= 0");
  if (!(opt.heading_weight > 0.0)) throw ConfigError("kmeans: heading weight must be positive");
}

}  // namespace

std::size_t count_distinct(const std::vector<Trajectory>& trajs, double heading_weight) {
  return distinct_rows(to_points(trajs, heading_weight));
}

KMeansResult kmeans_cluster(const std::vector<Trajectory>& trajs, const KMeansOptions& opt) {
  check_options(trajs, opt);
  const Points p = to_points(trajs, opt.heading_weight);
  const std::size_t distinct = distinct_rows(p);
  if (opt.k > distinct)
    throw ConfigError("kmeans: k=" + std::to_string(opt.k) + " exceeds the " +
                      std::to_string(distinct) + " distinct input trajectories");
  return run_kmeans(p, kmeanspp_seed(p, opt.k, opt.seed), opt, trajs.front().dt);
}

KMeansResult kmeans_refine(const std::vector<Trajectory>& trajs, const Vocabulary& init,
                           const KMeansOptions& opt) {
  check_options(trajs, opt);
  const Points p = to_points(trajs, opt.heading_weight);
  KMeansOptions o = opt;
  o.k = init.size();
  const Points c = to_points(init.trajectories, opt.heading_weight);
  if (c.dim != p.dim) throw ConfigError("kmeans: initial centres have a different horizon");
  return run_kmeans(p, c.data, o, trajs.front().dt);
}

std::size_t nearest_vocab_index(const Vocabulary& vocab, const Trajectory& traj) {
  std::size_t best_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const double d = squared_distance(vocab[i], traj, vocab.heading_weight);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return best_i;
}

namespace {
constexpr char kVocabMagic[8] = {'H', 'Y', 'V', 'O', 'C', 'A', 'B', '1'};

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw IoError("vocabulary: truncated data");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}
}  // namespace

std::string encode_vocabulary(const Vocabulary& vocab) {
  std::string out(kVocabMagic, sizeof(kVocabMagic));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.horizon));
  put<double>(out, vocab.dt);
  put<double>(out, vocab.heading_weight);
  for (const Trajectory& t : vocab.trajectories) {
    if (t.horizon() != static_cast<std::size_t>(vocab.horizon))
      throw ConfigError("vocabulary: entry length differs from horizon");
    for (const Pose& p : t.poses) {
      put<double>(out, p.x);
      put<double>(out, p.y);
      put<double>(out, p.heading);
    }
  }
  return out;
}

Vocabulary decode_vocabulary(std::string_view bytes) {
  if (bytes.size() < sizeof(kVocabMagic) || std::memcmp(bytes.data(), kVocabMagic, sizeof(kVocabMagic)) != 0)
    throw IoError("vocabulary: bad magic");
  std::size_t pos = sizeof(kVocabMagic);
  Vocabulary v;
  const auto k = take<std::uint32_t>(bytes, pos);
  v.horizon = static_cast<int>(take<std::uint32_t>(bytes, pos));
  v.dt = take<double>(bytes, pos);
  v.heading_weight = take<double>(bytes, pos);
  if (k == 0 || v.horizon <= 1 || !(v.dt > 0.0)) throw IoError("vocabulary: invalid header");
  const std::size_t expect = pos + static_cast<std::size_t>(k) * v.horizon * 3 * sizeof(double);
  if (bytes.size() != expect) throw IoError("vocabulary: size does not match header");
  v.trajectories.resize(k);
  for (Trajectory& t : v.trajectories) {
    t.dt = v.dt;
    t.poses.resize(static_cast<std::size_t>(v.horizon));
    for (Pose& p : t.poses) {
      p.x = take<double>(bytes, pos);
      p.y = take<double>(bytes, pos);
      p.heading = take<double>(bytes, pos);
    }
  }
  return v;
}

std::uint64_t vocabulary_hash(const Vocabulary& vocab) { return fnv1a(encode_vocabulary(vocab)); }

}  // namespace hydra
