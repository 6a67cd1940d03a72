#include "hydra/infer.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "hydra/common.hpp"

namespace hydra {

void CostWeights::validate() const {
  if (!(w1 > 0.0) || !(w2 > 0.0) || !(w3 > 0.0) || !(w4 > 0.0))
    throw ConfigError("cost weights must all be positive");
}

namespace {
double clog(double s) { return std::log(std::clamp(s, kLogClamp, 1.0)); }
}  // namespace

Eigen::VectorXd assemble_cost(const PredictionBundle& bundle, const CostWeights& w) {
  w.validate();
  const Eigen::Index k = bundle.imitation.size();
  const Eigen::Index heads = bundle.metric_scores.cols();
  if (bundle.metric_scores.rows() != k || (heads != 1 && heads != static_cast<Eigen::Index>(kNumMetrics)))
    throw ConfigError("assemble_cost: malformed prediction bundle");
  Eigen::VectorXd cost(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto s = bundle.metric_scores.row(i);
    if (heads == 1) {
      cost[i] = -(w.w1 * clog(bundle.imitation[i]) + w.w4 * clog(s[0]));
      continue;
    }
    const double inner = 5.0 * std::clamp(s[kTTC], kLogClamp, 1.0) +
                         2.0 * std::clamp(s[kComfort], kLogClamp, 1.0) +
                         5.0 * std::clamp(s[kEP], kLogClamp, 1.0);
    cost[i] = -(w.w1 * clog(bundle.imitation[i]) + w.w2 * clog(s[kNC]) + w.w3 * clog(s[kDAC]) +
                w.w4 * std::log(std::max(inner, kLogClamp)));
  }
  return cost;
}

std::size_t argmin_index(const Eigen::VectorXd& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] < v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

std::size_t argmax_index(const Eigen::VectorXd& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

Selection select_trajectory(const PredictionBundle& bundle, const CostWeights& w,
                            const Vocabulary& vocab) {
  if (static_cast<std::size_t>(bundle.imitation.size()) != vocab.size())
    throw ConfigError("select_trajectory: bundle and vocabulary sizes differ");
  const std::size_t i = argmin_index(assemble_cost(bundle, w));
  return {i, vocab[i]};
}

PredictionBundle ensemble_subscores(std::span<const PredictionBundle> bundles,
                                    std::span<const double> model_weights) {
  if (bundles.empty()) throw ConfigError("ensemble: no bundles");
  if (bundles.size() != model_weights.size())
    throw ConfigError("ensemble: one weight per bundle required");
  double total = 0.0;
  for (double w : model_weights) {
    if (!(w >= 0.0)) throw ConfigError("ensemble: weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("ensemble: weights must sum to 1");
  const auto& first = bundles.front();
  PredictionBundle out;
  out.imitation = Eigen::VectorXd::Zero(first.imitation.size());
  out.metric_scores = RowMatrix::Zero(first.metric_scores.rows(), first.metric_scores.cols());
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto& x = bundles[b];
    if (x.imitation.size() != first.imitation.size() ||
        x.metric_scores.rows() != first.metric_scores.rows() ||
        x.metric_scores.cols() != first.metric_scores.cols())
      throw ConfigError("ensemble: bundle shapes differ");
    out.imitation += model_weights[b] * x.imitation;
    out.metric_scores += model_weights[b] * x.metric_scores;
  }
  out.imitation /= out.imitation.sum();
  return out;
}

PredictionBundle bundle_from_labels(const TeacherLabels& labels, const Eigen::VectorXd& imitation) {
  PredictionBundle b;
  b.imitation = imitation;
  b.metric_scores = distillation_targets(labels, DistillationTarget::kMultiTarget);
  return b;
}

std::vector<double> log_grid(double lo, double hi, int count) {
  if (count < 1) throw ConfigError("log_grid: count must be >= 1");
  if (!(lo > 0.0) || hi < lo) throw ConfigError("log_grid: need 0 < lo <= hi");
  std::vector<double> v;
  for (int i = 0; i < count; ++i) {
    if (i == 0) v.push_back(lo);
    else if (i == count - 1) v.push_back(hi);
    else v.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  }
  return v;
}

double mean_selected_pdm(std::span<const ValidationItem> items, const CostWeights& w) {
  double s = 0.0;
  for (const auto& it : items) {
    const std::size_t i = argmin_index(assemble_cost(*it.bundle, w));
    s += pdm_score(it.labels->scores[i]);
  }
  return s / static_cast<double>(items.size());
}

GridSearchResult grid_search_weights(std::span<const ValidationItem> items, const GridConfig& grid) {
  if (items.empty()) throw ConfigError("grid_search_weights: empty validation set");
  for (const auto& axis : grid.axes)
    if (axis.empty()) throw ConfigError("grid_search_weights: empty grid axis");
  std::vector<CostWeights> combos;
  for (double a : grid.axes[0])
    for (double b : grid.axes[1])
      for (double c : grid.axes[2])
        for (double d : grid.axes[3]) combos.push_back({a, b, c, d});
  std::sort(combos.begin(), combos.end(), [](const CostWeights& x, const CostWeights& y) {
    return std::tie(x.w1, x.w2, x.w3, x.w4) < std::tie(y.w1, y.w2, y.w3, y.w4);
  });
  for (const auto& c : combos) c.validate();

  GridSearchResult res;
  res.evaluated.resize(combos.size());
  parallel_for(combos.size(), [&](std::size_t i) {
    res.evaluated[i] = {combos[i], mean_selected_pdm(items, combos[i])};
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < res.evaluated.size(); ++i)
    if (res.evaluated[i].mean_pdm > res.evaluated[best].mean_pdm) best = i;
  res.best = res.evaluated[best].weights;
  res.best_pdm = res.evaluated[best].mean_pdm;
  return res;
}

PredictedPerception perceive(const Observation& obs, const Pose& ego_pose, double threshold) {
  PredictedPerception p;
  const int g = obs.grid;
  p.drivable.origin = ego_pose;
  p.drivable.grid = g;
  p.drivable.cell_size = obs.cell_size;
  p.drivable.cells.resize(static_cast<std::size_t>(g) * static_cast<std::size_t>(g));
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c)
      p.drivable.cells[static_cast<std::size_t>(r * g + c)] = obs.at(r, c, 0) >= threshold ? 1 : 0;

  // 4-connected blobs of the agent channel become stationary boxes.
  std::vector<char> seen(static_cast<std::size_t>(g * g), 0);
  const RasterConfig rc{g, obs.cell_size};
  for (int r0 = 0; r0 < g; ++r0) {
    for (int c0 = 0; c0 < g; ++c0) {
      if (seen[static_cast<std::size_t>(r0 * g + c0)] || obs.at(r0, c0, 1) < threshold) continue;
      int rmin = r0, rmax = r0, cmin = c0, cmax = c0;
      std::queue<std::pair<int, int>> q;
      q.push({r0, c0});
      seen[static_cast<std::size_t>(r0 * g + c0)] = 1;
      while (!q.empty()) {
        const auto [r, c] = q.front();
        q.pop();
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
        const int dr[4] = {1, -1, 0, 0};
        const int dc[4] = {0, 0, 1, -1};
        for (int n = 0; n < 4; ++n) {
          const int rr = r + dr[n];
          const int cc = c + dc[n];
          if (rr < 0 || cc < 0 || rr >= g || cc >= g) continue;
          auto& s = seen[static_cast<std::size_t>(rr * g + cc)];
          if (s || obs.at(rr, cc, 1) < threshold) continue;
          s = 1;
          q.push({rr, cc});
        }
      }
      const Vec2 lo = cell_center(rc, rmin, cmin);
      const Vec2 hi = cell_center(rc, rmax, cmax);
      Agent a;
      const Vec2 mid = 0.5 * (lo + hi);
      a.initial_pose = compose(ego_pose, {mid.x, mid.y, 0.0});
      a.footprint = {0.5 * (hi.x - lo.x + obs.cell_size), 0.5 * (hi.y - lo.y + obs.cell_size)};
      a.velocity = 0.0;
      p.agents.push_back(a);
    }
  }
  return p;
}

WorldModel perceived_world(const PredictedPerception& p, std::span<const Vec2> route,
                           const Vocabulary& vocab, const Pose& ego_pose) {
  WorldModel w;
  w.grid = &p.drivable;
  w.agents = p.agents;
  w.route = route;
  double best = 0.0;
  for (const auto& t : vocab.trajectories) best = std::max(best, route_progress(route, to_world(t, ego_pose)));
  w.reference_progress = best;
  return w;
}

PredictionBundle post_process_bundle(const PredictionBundle& imitation_bundle, const WorldModel& world,
                                     const Vocabulary& vocab, const Pose& ego_pose,
                                     const MetricsConfig& cfg) {
  PredictionBundle b;
  b.imitation = imitation_bundle.imitation;
  b.metric_scores.resize(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(kNumMetrics));
  parallel_for(vocab.size(), [&](std::size_t i) {
    const SubScores s = evaluate_trajectory(world, to_world(vocab[i], ego_pose), cfg);
    for (std::size_t m = 0; m < kNumMetrics; ++m)
      b.metric_scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = s[m];
  });
  return b;
}

Selection baseline_select(BaselineMode mode, const PredictionBundle& bundle, const WorldModel& world,
                          const Vocabulary& vocab, const Pose& ego_pose, const CostWeights& w,
                          const MetricsConfig& cfg) {
  if (static_cast<std::size_t>(bundle.imitation.size()) != vocab.size())
    throw ConfigError("baseline_select: bundle and vocabulary sizes differ");
  if (mode == BaselineMode::kA) {
    const std::size_t i = argmax_index(bundle.imitation);
    return {i, vocab[i]};
  }
  return select_trajectory(post_process_bundle(bundle, world, vocab, ego_pose, cfg), w, vocab);
}

}  // namespace hydra
