// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed
// here and nowhere else.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hydra/io.hpp"
#include "hydra/pipeline.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace hydra;

namespace {

// ---- pinned tolerances ----------------------------------------------------------
constexpr int kOraclePairs = 1000;
constexpr int kSupersample = 10;
constexpr double kOracleAgreement = 0.995;
constexpr double kBoundaryMargin = 0.01;  // metres
constexpr double kOracleSeconds = 60.0;

constexpr int kPdmTuples = 100000;
constexpr double kPdmTolerance = 1e-12;

constexpr int kKMeansRuns = 100;
constexpr double kSseSlack = 1e-9;  // relative, per iteration
constexpr double kZeroSse = 1e-18;

constexpr int kGradDraws = 5;
constexpr double kGradRelError = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradFloor = 1e-6;  // denominators below this count as this

constexpr double kTrendImitationMargin = 2.0;  // PDM points
constexpr double kTrendPdmOnlySlack = 0.5;
constexpr double kWeightedTestSlack = 1.0;
constexpr double kPostProcessMargin = 1.0;
constexpr double kPipelineCpuSeconds = 1800.0;
constexpr double kValTieSlack = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---- 1: metric kernel against the brute-force oracle -------------------------------

Outcome metric_oracle() {
  const double start = cpu_seconds();
  const WorldConfig wc;
  const MetricsConfig mc;
  const std::vector<Trajectory> trajs = sample_trajectories(kOraclePairs, KinematicConfig{}, 424242);
  int agree = 0, nonboundary = 0, nonboundary_agree = 0, violations = 0;
  std::array<int, 3> mismatch{};
  for (int i = 0; i < kOraclePairs; ++i) {
    const Scenario s = generate_scenario(50'000'000ULL + static_cast<std::uint64_t>(i), wc);
    const Trajectory t = to_world(trajs[static_cast<std::size_t>(i)], s.ego_start.pose);

    std::vector<oracle::State> poses;
    for (const Pose& p : t.poses) poses.push_back({p.x, p.y, p.heading});
    std::vector<oracle::P> area;
    for (const Vec2& v : s.drivable_area.vertices()) area.push_back({v.x, v.y});
    std::vector<oracle::Mover> movers;
    for (const Agent& a : s.agents)
      movers.push_back({{a.initial_pose.x, a.initial_pose.y, a.initial_pose.heading},
                        a.velocity,
                        a.footprint.half_length,
                        a.footprint.half_width});
    const oracle::Verdict o = oracle::brute_force(poses, t.dt, mc.ego_footprint.half_length,
                                                  mc.ego_footprint.half_width, area, movers, kSupersample,
                                                  mc.ttc_horizon);
    const std::array<int, 3> got = {no_collision(s, t, mc), drivable_area_compliance(s, t, mc),
                                    time_to_collision(s, t, mc)};
    const std::array<int, 3> want = {o.nc, o.dac, o.ttc};
    const std::array<double, 3> margin = {o.nc_clearance, o.dac_clearance, o.ttc_clearance};
    bool all = true;
    for (int m = 0; m < 3; ++m) {
      if (want[m] == 0) ++violations;
      const bool same = got[m] == want[m];
      if (!same) {
        all = false;
        ++mismatch[m];
      }
      if (margin[m] > kBoundaryMargin) {
        ++nonboundary;
        if (same) ++nonboundary_agree;
      }
    }
    if (all) ++agree;
  }
  const double secs = cpu_seconds() - start;
  const double rate = static_cast<double>(agree) / kOraclePairs;
  Outcome out;
  out.pass = rate >= kOracleAgreement && nonboundary_agree == nonboundary && secs < kOracleSeconds;
  out.detail = fmt(
      "%d pairs, all-three agreement %.2f%% (need >= %.1f%%; NC/DAC/TTC mismatches %d/%d/%d), "
      "non-boundary decisions %d/%d, %d oracle violations, %.1f s",
      kOraclePairs, 100.0 * rate, 100.0 * kOracleAgreement, mismatch[0], mismatch[1], mismatch[2],
      nonboundary_agree, nonboundary, violations, secs);
  return out;
}

// ---- 2: PDM formula -----------------------------------------------------------

Outcome pdm_exactness() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  for (int i = 0; i < kPdmTuples; ++i) {
    // Half the draws use binary gating metrics as the teacher produces them.
    const bool binary = i % 2 == 0;
    auto gate = [&] { return binary ? (coin(rng) ? 1.0 : 0.0) : u(rng); };
    SubScores s;
    s.nc = gate();
    s.dac = gate();
    s.ttc = gate();
    s.comfort = gate();
    s.ep = u(rng);
    worst = std::max(worst, std::abs(pdm_score(s) - oracle::pdm(s.nc, s.dac, s.ttc, s.comfort, s.ep)));
  }
  return {worst <= kPdmTolerance, fmt("%d tuples, max |error| %.3g (tolerance %.0e)", kPdmTuples, worst, kPdmTolerance)};
}

// ---- 3: K-means ----------------------------------------------------------------

Trajectory point_trajectory(double x, double y) { return Trajectory{{Pose{x, y, 0.0}}, 0.1}; }

Outcome kmeans_properties() {
  KinematicConfig kin;
  kin.horizon = 8;
  int monotone_runs = 0;
  int sse_consistent = 0;
  for (int r = 0; r < kKMeansRuns; ++r) {
    const auto data = sample_trajectories(200, kin, 1000 + static_cast<std::uint64_t>(r));
    KMeansOptions opt;
    opt.k = 12;
    opt.seed = static_cast<std::uint64_t>(r);
    opt.max_iters = 50;
    const KMeansResult res = kmeans_cluster(data, opt);
    bool mono = true;
    for (std::size_t i = 1; i < res.sse_history.size(); ++i)
      if (res.sse_history[i] > res.sse_history[i - 1] * (1.0 + kSseSlack)) mono = false;
    if (mono) ++monotone_runs;
    // Recompute the final SSE from scratch.
    double sse = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
      sse += squared_distance(data[i], res.vocabulary[res.assignment[i]], opt.heading_weight);
    if (std::abs(sse - res.sse) <= 1e-9 * std::max(1.0, sse)) ++sse_consistent;
  }

  // k equal to the number of distinct inputs, each repeated.
  const auto base = sample_trajectories(15, kin, 9);
  std::vector<Trajectory> repeated;
  for (int rep = 0; rep < 3; ++rep) repeated.insert(repeated.end(), base.begin(), base.end());
  KMeansOptions exact;
  exact.k = count_distinct(repeated, exact.heading_weight);
  const double zero_sse = kmeans_cluster(repeated, exact).sse;

  // Unit square corners with k = 2 against exhaustive enumeration.
  const std::vector<Trajectory> square = {point_trajectory(0, 0), point_trajectory(1, 0), point_trajectory(0, 1),
                                          point_trajectory(1, 1)};
  const double best = oracle::exhaustive_kmeans_sse({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}}, 2);
  int square_ok = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    KMeansOptions sq;
    sq.k = 2;
    sq.seed = seed;
    if (std::abs(kmeans_cluster(square, sq).sse - best) <= 1e-12) ++square_ok;
  }
  Outcome out;
  out.pass = monotone_runs == kKMeansRuns && sse_consistent == kKMeansRuns && exact.k == 15 && zero_sse <= kZeroSse &&
             square_ok == 20;
  out.detail = fmt(
      "monotone SSE in %d/%d runs (final SSE consistent %d/%d), k=distinct(%zu) SSE %.3g, "
      "square k=2 optimum %.3g matched for %d/20 seeds",
      monotone_runs, kKMeansRuns, sse_consistent, kKMeansRuns, exact.k, zero_sse, best, square_ok);
  return out;
}

// ---- 4: gradients ----------------------------------------------------------------

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t checked = 0;
  for (int draw = 0; draw < kGradDraws; ++draw) {
    ModelConfig mc;
    mc.grid = 16;
    mc.dim = 8;
    mc.vocab_size = 4;
    mc.horizon = 10;
    mc.tokens = 2;
    // Alternate head layouts so both losses are covered.
    mc.target = draw % 2 == 0 ? DistillationTarget::kMultiTarget : DistillationTarget::kPdmOnly;
    const StudentModel base = StudentModel::initialized(mc, 100 + static_cast<std::uint64_t>(draw));

    KinematicConfig kin;
    kin.horizon = mc.horizon;
    Vocabulary vocab;
    vocab.horizon = mc.horizon;
    vocab.trajectories = sample_trajectories(4, kin, 200 + static_cast<std::uint64_t>(draw));
    RasterConfig rc;
    rc.grid = 16;
    WorldConfig wc;
    wc.horizon = mc.horizon;
    std::vector<Observation> obs;
    std::vector<ImitationTarget> tgt;
    std::vector<RowMatrix> teacher;
    for (int b = 0; b < 2; ++b) {
      const Scenario s = generate_scenario(300 + static_cast<std::uint64_t>(draw * 2 + b), wc);
      obs.push_back(render_observation(s, rc, NoiseConfig{}, 7));
      Trajectory expert = expert_in_ego_frame(s);
      tgt.push_back(imitation_target(vocab, expert, 5.0));
      teacher.push_back(distillation_targets(simulate_vocabulary(s, vocab, 0), mc.target));
    }
    std::vector<TrainingExample> batch;
    for (int b = 0; b < 2; ++b) batch.push_back({&obs[b], &tgt[b], &teacher[b]});
    const RowMatrix feats = vocabulary_features(vocab, mc);
    const double lambda = 0.7;

    std::vector<double> grad;
    compute_gradients(base, feats, batch, lambda, grad);
    StudentModel probe = base;
    std::vector<double> scratch;
    auto loss_at = [&] { return compute_gradients(probe, feats, batch, lambda, scratch).total; };
    for (std::size_t i = 0; i < base.parameters().size(); ++i) {
      const double x = base.parameters()[i];
      probe.parameters()[i] = x + kGradStep;
      const double up = loss_at();
      probe.parameters()[i] = x - kGradStep;
      const double down = loss_at();
      probe.parameters()[i] = x;
      const double fd = (up - down) / (2.0 * kGradStep);
      const double denom = std::max({std::abs(fd), std::abs(grad[i]), kGradFloor});
      worst = std::max(worst, std::abs(fd - grad[i]) / denom);
      ++checked;
    }
  }
  return {worst < kGradRelError,
          fmt("%zu parameters over %d draws (d=8, k=4, G=16), max relative error %.3g (limit %.0e)", checked,
              kGradDraws, worst, kGradRelError)};
}

// ---- 5-10: end-to-end pipeline ------------------------------------------------------

struct RunArtifacts {
  fs::path dir;
  double cpu = 0.0;
  double wall = 0.0;
  std::map<std::string, double> pdm;  // report name -> mean PDM x100
};

RunArtifacts run_full_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  PipelineConfig cfg;
  Pipeline p(cfg, dir, [](std::string_view line) { std::fprintf(stderr, "  %.*s\n", int(line.size()), line.data()); });
  RunArtifacts r;
  r.dir = dir;
  const double c0 = cpu_seconds();
  const auto w0 = std::chrono::steady_clock::now();
  p.run();
  r.cpu = cpu_seconds() - c0;
  r.wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - w0).count();
  for (const auto& e : fs::directory_iterator(dir / "reports")) {
    if (e.path().extension() != ".json") continue;
    const auto j = nlohmann::json::parse(io::read_file(e.path()));
    r.pdm[e.path().stem().string()] = j.at("pdm").get<double>();
  }
  return r;
}

std::vector<double> row(const RunArtifacts& r, const std::string& name, const PipelineConfig& cfg) {
  std::vector<double> out;
  for (std::uint64_t s : cfg.experiment.model_seeds) out.push_back(r.pdm.at(name + "-s" + std::to_string(s)));
  return out;
}

std::vector<Sample> load_split(const fs::path& dir, Split s, std::uint64_t vh) {
  const std::string name = to_string(s);
  auto scen = io::read_scenarios(dir / "data" / (name + ".scn.jsonl"));
  auto obs = io::read_observations(dir / "data" / (name + ".obs.bin"));
  auto tgt = io::read_targets(dir / "data" / (name + ".target.bin"));
  auto lab = io::read_labels(dir / "labels" / (name + ".labels.bin"), dir / "labels" / (name + ".labels.json"), vh);
  std::vector<Sample> out(scen.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {scen[i], obs[i], tgt[i], lab[i]};
  return out;
}

std::string seeds_text(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.2f", x);
  return s;
}

bool on_grid(const GridConfig& g, const CostWeights& w) {
  const std::array<double, 4> v = {w.w1, w.w2, w.w3, w.w4};
  for (int i = 0; i < 4; ++i)
    if (std::find(g.axes[i].begin(), g.axes[i].end(), v[i]) == g.axes[i].end()) return false;
  return true;
}

struct Suite {
  std::set<int> only;
  fs::path work;
  int failures = 0;

  bool wants(int n) const { return only.empty() || only.count(n) > 0; }

  void report(int n, const char* name, const Outcome& o) {
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }

  void guarded(int n, const char* name, const std::function<Outcome()>& fn) {
    if (!wants(n)) return;
    try {
      report(n, name, fn());
    } catch (const std::exception& e) {
      report(n, name, {false, std::string("error: ") + e.what()});
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Suite suite;
  std::vector<int> only;
  std::string work = "acceptance-work";
  app.add_option("--only", only, "Criteria to run (default: all)");
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);
  suite.only = {only.begin(), only.end()};
  suite.work = work;

  suite.guarded(1, "metric kernels match the brute-force geometric oracle", metric_oracle);
  suite.guarded(2, "PDM aggregate formula is exact", pdm_exactness);
  suite.guarded(3, "K-means SSE monotone, exact fit and square optimum", kmeans_properties);
  suite.guarded(4, "analytic gradients match central differences", gradient_check);

  const bool need_pipeline = std::any_of(suite.only.begin(), suite.only.end(), [](int n) { return n >= 5; }) ||
                             suite.only.empty();
  if (!need_pipeline) return suite.failures == 0 ? 0 : 1;

  const PipelineConfig cfg = [] {
    PipelineConfig c;
    c.resolve();
    return c;
  }();
  RunArtifacts a;
  std::string run_error;
  try {
    std::fprintf(stderr, "full pipeline run A under %s\n", (suite.work / "run-a").c_str());
    a = run_full_pipeline(suite.work / "run-a");
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  auto pipeline_guard = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    if (!run_error.empty()) {
      if (suite.wants(n)) suite.report(n, name, {false, "pipeline run failed: " + run_error});
      return;
    }
    suite.guarded(n, name, fn);
  };

  pipeline_guard(5, "multi-target distillation beats imitation-only", [&] {
    const auto mt = row(a, "multi-target", cfg);
    const auto im = row(a, "imitation-only", cfg);
    const double delta = mean(mt) - mean(im);
    return Outcome{delta >= kTrendImitationMargin && a.cpu < kPipelineCpuSeconds,
                   fmt("test PDM multi-target %.2f (%s) vs imitation-only %.2f (%s): delta %+.2f (need >= %.1f); "
                       "pipeline %.0f s CPU, %.0f s wall (limit %.0f s)",
                       mean(mt), seeds_text(mt).c_str(), mean(im), seeds_text(im).c_str(), delta,
                       kTrendImitationMargin, a.cpu, a.wall, kPipelineCpuSeconds)};
  });

  pipeline_guard(6, "multi-target beats PDM-only distillation", [&] {
    const auto mt = row(a, "multi-target", cfg);
    const auto po = row(a, "pdm-only", cfg);
    const double delta = mean(mt) - mean(po);
    return Outcome{delta >= -kTrendPdmOnlySlack,
                   fmt("test PDM multi-target %.2f (%s) vs pdm-only %.2f (%s): delta %+.2f (need >= %.1f)", mean(mt),
                       seeds_text(mt).c_str(), mean(po), seeds_text(po).c_str(), delta, -kTrendPdmOnlySlack)};
  });

  pipeline_guard(7, "grid-searched weights help", [&] {
    const CostWeights def = cfg.experiment.default_weights;
    const bool grid_has_default = on_grid(cfg.experiment.grid, def);
    const Vocabulary vocab = io::read_vocabulary(a.dir / "vocab" / "vocabulary.bin");
    const std::uint64_t vh = vocabulary_hash(vocab);
    const auto val = load_split(a.dir / "", Split::kVal, vh);
    std::vector<double> val_def, val_grid;
    bool val_ok = true;
    for (std::uint64_t seed : cfg.experiment.model_seeds) {
      const std::string name = "multi-target-s" + std::to_string(seed);
      const StudentModel m = io::read_checkpoint(a.dir / "checkpoints" / (name + ".best.ckpt"));
      const CostWeights w = io::read_weights(a.dir / "weights" / (name + ".weights"));
      const ModelRef ref{&m, 1.0};
      const auto bundles = predict_split({&ref, 1}, val, vocab);
      std::vector<ValidationItem> items;
      for (std::size_t i = 0; i < val.size(); ++i) items.push_back({&bundles[i], &val[i].labels});
      val_def.push_back(100.0 * mean_selected_pdm(items, def));
      val_grid.push_back(100.0 * mean_selected_pdm(items, w));
      if (val_grid.back() < val_def.back() - kValTieSlack) val_ok = false;
    }
    const auto wt = row(a, "weighted", cfg);
    const auto mt = row(a, "multi-target", cfg);
    const double delta = mean(wt) - mean(mt);
    return Outcome{grid_has_default && val_ok && delta >= -kWeightedTestSlack,
                   fmt("defaults on grid: %s; validation PDM grid %s vs default %s; test PDM weighted %.2f (%s) vs "
                       "default %.2f: delta %+.2f (need >= %.1f)",
                       grid_has_default ? "yes" : "no", seeds_text(val_grid).c_str(), seeds_text(val_def).c_str(),
                       mean(wt), seeds_text(wt).c_str(), mean(mt), delta, -kWeightedTestSlack)};
  });

  pipeline_guard(8, "post-processing underperforms distillation", [&] {
    const auto mt = row(a, "multi-target", cfg);
    const auto pp = row(a, "post-process", cfg);
    const double delta = mean(mt) - mean(pp);
    return Outcome{delta >= kPostProcessMargin && cfg.experiment.noise.dropout == 0.3,
                   fmt("test PDM multi-target %.2f vs post-process %.2f (%s) at dropout %.2f: margin %+.2f (need >= "
                       "%.1f)",
                       mean(mt), mean(pp), seeds_text(pp).c_str(), cfg.experiment.noise.dropout, delta,
                       kPostProcessMargin)};
  });

  pipeline_guard(9, "sub-score ensemble is no worse than its members", [&] {
    // Same inference on both sides: grid weights (the table's ensemble row
    // against the weighted rows) and default weights (recomputed here).
    const auto wt = row(a, "weighted", cfg);
    const double ens_grid = a.pdm.at("ensemble");
    const Vocabulary vocab = io::read_vocabulary(a.dir / "vocab" / "vocabulary.bin");
    const auto test = load_split(a.dir, Split::kTest, vocabulary_hash(vocab));
    std::vector<StudentModel> models;
    for (std::uint64_t seed : cfg.experiment.model_seeds)
      models.push_back(io::read_checkpoint(a.dir / "checkpoints" / ("multi-target-s" + std::to_string(seed) + ".best.ckpt")));
    std::vector<ModelRef> refs;
    for (const auto& m : models) refs.push_back({&m, 1.0 / static_cast<double>(models.size())});
    const double ens_def = evaluate(refs, test, vocab, InferenceMode::kAssembledCost, std::nullopt, cfg.experiment).pdm;
    const auto mt = row(a, "multi-target", cfg);
    return Outcome{ens_grid >= mean(wt) && ens_def >= mean(mt),
                   fmt("grid weights: ensemble %.2f vs members %.2f (%s); default weights: ensemble %.2f vs members "
                       "%.2f (%s)",
                       ens_grid, mean(wt), seeds_text(wt).c_str(), ens_def, mean(mt), seeds_text(mt).c_str())};
  });

  pipeline_guard(10, "identical config reproduces byte-identical reports", [&] {
    std::fprintf(stderr, "full pipeline run B under %s\n", (suite.work / "run-b").c_str());
    const RunArtifacts b = run_full_pipeline(suite.work / "run-b");
    int same = 0, total = 0;
    std::string first_diff;
    std::set<std::string> names;
    for (const auto& d : {a.dir, b.dir})
      for (const auto& e : fs::directory_iterator(d / "reports")) names.insert(e.path().filename().string());
    for (const std::string& n : names) {
      ++total;
      const fs::path pa = a.dir / "reports" / n, pb = b.dir / "reports" / n;
      if (fs::exists(pa) && fs::exists(pb) && io::read_file(pa) == io::read_file(pb))
        ++same;
      else if (first_diff.empty())
        first_diff = n;
    }
    return Outcome{same == total && total > 0,
                   fmt("%d/%d report files byte-identical across two fresh runs%s%s", same, total,
                       first_diff.empty() ? "" : "; first difference: ", first_diff.c_str())};
  });

  std::printf("%s\n", suite.failures == 0 ? "all criteria passed" : fmt("%d criteria failed", suite.failures).c_str());
  return suite.failures == 0 ? 0 : 1;
}
