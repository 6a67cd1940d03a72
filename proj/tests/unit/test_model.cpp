#include <numeric>
#include <random>

#include "doctest.h"
#include "hydra/common.hpp"
#include "hydra/model.hpp"
#include "hydra/train.hpp"

using namespace hydra;

namespace {

struct Toy {
  ModelConfig cfg;
  Vocabulary vocab;
  std::vector<Scenario> scenarios;
  std::vector<Observation> obs;
  std::vector<ImitationTarget> targets;
  std::vector<RowMatrix> teacher;

  std::vector<TrainingExample> batch() const {
    std::vector<TrainingExample> b;
    for (std::size_t i = 0; i < obs.size(); ++i) b.push_back({&obs[i], &targets[i], &teacher[i]});
    return b;
  }
};

Toy make_toy(int k, std::uint64_t seed, DistillationTarget target = DistillationTarget::kMultiTarget,
             int examples = 3) {
  Toy t;
  t.cfg.grid = 16;
  t.cfg.horizon = 10;
  t.cfg.dim = 8;
  t.cfg.tokens = 2;
  t.cfg.vocab_size = k;
  t.cfg.target = target;
  KinematicConfig kin;
  kin.horizon = 10;
  t.vocab.horizon = 10;
  t.vocab.trajectories = sample_trajectories(static_cast<std::size_t>(k), kin, seed);
  WorldConfig wc;
  wc.horizon = 10;
  RasterConfig rc;
  rc.grid = 16;
  for (int i = 0; i < examples; ++i) {
    t.scenarios.push_back(generate_scenario(seed * 10 + static_cast<std::uint64_t>(i), wc));
    const Scenario& s = t.scenarios.back();
    t.obs.push_back(render_observation(s, rc, NoiseConfig{}, seed + static_cast<std::uint64_t>(i)));
    t.targets.push_back(imitation_target(t.vocab, expert_in_ego_frame(s), 4.0));
    t.teacher.push_back(distillation_targets(simulate_vocabulary(s, t.vocab, 0), target));
  }
  return t;
}

}  // namespace

TEST_CASE("one vocabulary entry always gets probability 1") {
  const Toy t = make_toy(1, 3);
  const StudentModel m = StudentModel::initialized(t.cfg, 5);
  const PredictionBundle b = forward(m, t.obs[0], t.vocab);
  REQUIRE(b.imitation.size() == 1);
  CHECK(b.imitation[0] == 1.0);
  CHECK(imitation_target(t.vocab, t.vocab[0], 1.0).y[0] == 1.0);
}

TEST_CASE("zero parameters give metric scores of one half") {
  const Toy t = make_toy(6, 4);
  const StudentModel m(t.cfg);
  const PredictionBundle b = forward(m, t.obs[0], t.vocab);
  CHECK((b.metric_scores.array() == 0.5).all());
  CHECK(b.imitation.sum() == doctest::Approx(1.0));
  CHECK((b.imitation.array() == b.imitation[0]).all());
}

TEST_CASE("forward is deterministic and normalized") {
  const Toy t = make_toy(12, 5);
  const StudentModel m = StudentModel::initialized(t.cfg, 6);
  const PredictionBundle a = forward(m, t.obs[1], t.vocab);
  const PredictionBundle b = forward(m, t.obs[1], t.vocab);
  CHECK(a.imitation == b.imitation);
  CHECK(a.metric_scores == b.metric_scores);
  CHECK(std::abs(a.imitation.sum() - 1.0) < 1e-6);
  CHECK(a.metric_scores.cols() == 5);
  CHECK((a.metric_scores.array() > 0.0).all());
  CHECK((a.metric_scores.array() < 1.0).all());
  CHECK(StudentModel::initialized(t.cfg, 6).parameters() == m.parameters());
}

TEST_CASE("PDM-only models carry a single metric head") {
  const Toy t = make_toy(5, 6, DistillationTarget::kPdmOnly);
  const StudentModel m = StudentModel::initialized(t.cfg, 1);
  CHECK(forward(m, t.obs[0], t.vocab).metric_scores.cols() == 1);
  CHECK(t.teacher[0].cols() == 1);
}

TEST_CASE("imitation targets") {
  Vocabulary v;
  v.horizon = 2;
  auto line = [](double y) { return Trajectory{{Pose{0, y, 0}, Pose{1, y, 0}}, 0.1}; };
  const double sigma = 1.0;
  v.trajectories = {line(0), line(20), line(-30), line(40)};
  CHECK(imitation_target(v, line(0), sigma).y[0] > 0.999);
  // Entries 1 and 2 are equidistant from the expert; the others are far away.
  v.trajectories = {line(50), line(1), line(-1), line(-60)};
  const auto y = imitation_target(v, line(0), sigma).y;
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(y[2] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK_THROWS_AS(imitation_target(v, line(0), 0.0), ConfigError);
}

TEST_CASE("imitation target argmax is the nearest entry for any temperature") {
  const auto data = sample_trajectories(40, KinematicConfig{}, 7);
  Vocabulary v;
  v.horizon = 40;
  v.trajectories = data;
  for (const auto& expert : sample_trajectories(50, KinematicConfig{}, 8))
    for (double sigma : {0.5, 5.0, 50.0, 500.0}) {
      const auto y = imitation_target(v, expert, sigma).y;
      Eigen::Index arg = 0;
      y.maxCoeff(&arg);
      REQUIRE(static_cast<std::size_t>(arg) == nearest_vocab_index(v, expert));
      REQUIRE(std::abs(y.sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("imitation loss") {
  PredictionBundle b;
  ImitationTarget t;
  t.y = Eigen::VectorXd::Zero(8);
  t.y[3] = 1.0;
  b.imitation = Eigen::VectorXd::Constant(8, 1.0 / 8);
  CHECK(imitation_loss(b, t) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  b.imitation = t.y;
  CHECK(imitation_loss(b, t) == 0.0);
  t.y = Eigen::VectorXd::Constant(4, 0.25);
  t.y << 0.1, 0.2, 0.3, 0.4;
  b.imitation = t.y;
  double entropy = 0;
  for (double p : {0.1, 0.2, 0.3, 0.4}) entropy -= p * std::log(p);
  CHECK(imitation_loss(b, t) == doctest::Approx(entropy).epsilon(1e-12));
  b.imitation = Eigen::VectorXd::Constant(3, 1.0 / 3);
  CHECK_THROWS_AS(imitation_loss(b, t), ConfigError);
}

TEST_CASE("distillation loss") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  RowMatrix labels(6, 5);
  for (Eigen::Index i = 0; i < labels.size(); ++i) labels.data()[i] = u(rng) < 0.5 ? 0.0 : 1.0;
  PredictionBundle b;
  b.metric_scores = labels;
  CHECK(distillation_loss(b, labels) <= -std::log(1.0 - kLogClamp) + 1e-15);
  b.metric_scores = RowMatrix::Constant(6, 5, 0.5);
  CHECK(distillation_loss(b, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // Independent binary cross-entropy with soft targets.
  RowMatrix soft(6, 5), pred(6, 5);
  for (Eigen::Index i = 0; i < soft.size(); ++i) {
    soft.data()[i] = u(rng);
    pred.data()[i] = u(rng);
  }
  b.metric_scores = pred;
  double want = 0;
  for (int i = 0; i < 30; ++i) {
    const double p = std::min(std::max(pred.data()[i], 1e-6), 1 - 1e-6);
    want += -(soft.data()[i] * std::log(p) + (1 - soft.data()[i]) * std::log(1 - p)) / 30.0;
  }
  CHECK(std::abs(distillation_loss(b, soft) - want) < 1e-9);
  CHECK_THROWS_AS(distillation_loss(b, RowMatrix(6, 1)), ConfigError);
}

TEST_CASE("gradients match central differences with step 1e-4") {
  for (DistillationTarget target : {DistillationTarget::kMultiTarget, DistillationTarget::kPdmOnly}) {
    const Toy t = make_toy(4, 11, target, 2);
    const StudentModel m = StudentModel::initialized(t.cfg, 12);
    const RowMatrix feats = vocabulary_features(t.vocab, t.cfg);
    const auto batch = t.batch();
    std::vector<double> grad, scratch;
    compute_gradients(m, feats, batch, 1.3, grad);
    StudentModel probe = m;
    double worst = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double x = m.parameters()[i];
      probe.parameters()[i] = x + 1e-4;
      const double up = compute_gradients(probe, feats, batch, 1.3, scratch).total;
      probe.parameters()[i] = x - 1e-4;
      const double down = compute_gradients(probe, feats, batch, 1.3, scratch).total;
      probe.parameters()[i] = x;
      const double fd = (up - down) / 2e-4;
      worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6}));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("lambda zero is pure imitation training") {
  const Toy t = make_toy(6, 13);
  const StudentModel m = StudentModel::initialized(t.cfg, 14);
  const RowMatrix feats = vocabulary_features(t.vocab, t.cfg);
  std::vector<double> g0, g1;
  const LossReport r = compute_gradients(m, feats, t.batch(), 0.0, g0);
  CHECK(r.total == r.imitation);
  CHECK(r.distillation > 0.0);
  // Teacher labels cannot influence the update.
  Toy other = t;
  for (auto& tt : other.teacher) tt = RowMatrix::Constant(tt.rows(), tt.cols(), 0.25);
  compute_gradients(m, feats, other.batch(), 0.0, g1);
  CHECK(g0 == g1);
}

// Smallest reachable loss: target entropy plus teacher binary entropy.
double loss_floor(const Toy& t, double lambda) {
  auto xlogx = [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; };
  double total = 0.0;
  for (std::size_t b = 0; b < t.targets.size(); ++b) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < t.targets[b].y.size(); ++i) h -= xlogx(t.targets[b].y[i]);
    double d = 0.0;
    const RowMatrix& y = t.teacher[b];
    for (Eigen::Index i = 0; i < y.size(); ++i) d -= xlogx(y.data()[i]) + xlogx(1.0 - y.data()[i]);
    total += h + lambda * d / static_cast<double>(y.size());
  }
  return total / static_cast<double>(t.targets.size());
}

TEST_CASE("overfitting one batch halves the excess loss within 200 steps") {
  const Toy t = make_toy(8, 15);
  StudentModel m = StudentModel::initialized(t.cfg, 16);
  const RowMatrix feats = vocabulary_features(t.vocab, t.cfg);
  AdamState st;
  AdamConfig adam;
  adam.lr = 3e-3;
  std::vector<double> g;
  const double first = compute_gradients(m, feats, t.batch(), 1.0, g).total;
  for (int i = 0; i < 200; ++i) train_step(m, feats, t.batch(), st, adam, 1.0);
  const double last = compute_gradients(m, feats, t.batch(), 1.0, g).total;
  const double floor = loss_floor(t, 1.0);
  CHECK(first > floor);
  CHECK(last >= floor - 1e-9);
  CHECK(last - floor <= 0.5 * (first - floor));
  CHECK(st.step == 200);
}

TEST_CASE("permuting the vocabulary permutes outputs and keeps losses") {
  const Toy t = make_toy(7, 17);
  const StudentModel m = StudentModel::initialized(t.cfg, 18);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(19));
  Vocabulary pv = t.vocab;
  for (std::size_t i = 0; i < 7; ++i) pv.trajectories[i] = t.vocab[perm[i]];
  const PredictionBundle a = forward(m, t.obs[0], t.vocab);
  const PredictionBundle b = forward(m, t.obs[0], pv);
  ImitationTarget pt;
  pt.y.resize(7);
  RowMatrix pteach(7, 5);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto src = static_cast<Eigen::Index>(perm[i]);
    const auto dst = static_cast<Eigen::Index>(i);
    CHECK(b.imitation[dst] == doctest::Approx(a.imitation[src]).epsilon(1e-12));
    for (Eigen::Index c = 0; c < 5; ++c)
      CHECK(b.metric_scores(dst, c) == doctest::Approx(a.metric_scores(src, c)).epsilon(1e-12));
    pt.y[dst] = t.targets[0].y[src];
    pteach.row(dst) = t.teacher[0].row(src);
  }
  CHECK(std::abs(imitation_loss(a, t.targets[0]) - imitation_loss(b, pt)) < 1e-9);
  CHECK(std::abs(distillation_loss(a, t.teacher[0]) - distillation_loss(b, pteach)) < 1e-9);
}

TEST_CASE("model configuration validation") {
  ModelConfig c;
  c.dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_distillation_target("pdm-only") == DistillationTarget::kPdmOnly);
  CHECK(std::string(to_string(DistillationTarget::kNone)) == "none");
  CHECK_THROWS_AS(parse_distillation_target("bogus"), ConfigError);
  const Toy t = make_toy(4, 20);
  ModelConfig wrong = t.cfg;
  wrong.vocab_size = 5;
  CHECK_THROWS_AS(forward(StudentModel(wrong), t.obs[0], t.vocab), ConfigError);
}
