#include "hydra/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hydra/common.hpp"

namespace hydra {

const char* to_string(DistillationTarget t) {
  switch (t) {
    case DistillationTarget::kMultiTarget: return "multi-target";
    case DistillationTarget::kPdmOnly: return "pdm-only";
    case DistillationTarget::kNone: return "none";
  }
  return "?";
}

DistillationTarget parse_distillation_target(const std::string& s) {
  if (s == "multi-target") return DistillationTarget::kMultiTarget;
  if (s == "pdm-only") return DistillationTarget::kPdmOnly;
  if (s == "none") return DistillationTarget::kNone;
  throw ConfigError("unknown distillation target '" + s + "'");
}

void ModelConfig::validate() const {
  if (grid < 16) throw ConfigError("model: grid must be >= 16");
  if (horizon < 2) throw ConfigError("model: horizon must be >= 2");
  if (tokens < 1 || dim < 1) throw ConfigError("model: tokens and dim must be >= 1");
  if (vocab_size < 1) throw ConfigError("model: vocab_size must be >= 1");
  if (!(traj_scale > 0.0)) throw ConfigError("model: traj_scale must be positive");
}

namespace {

enum Slot : std::size_t {
  kEncW, kEncB, kEgoW, kEgoB, kFc1W, kFc1B, kFc2W, kFc2B,
  kQuery, kKey, kValue, kTrunkW, kTrunkB, kHeadW, kHeadB, kNumSlots
};

constexpr std::array<double, kEgoStatusDim> kEgoScale = {0.1, 1.0, 1.0, 0.5};

using CMat = Eigen::Map<const RowMatrix>;
using Mat = Eigen::Map<RowMatrix>;
using CVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;

struct ConstParams {
  const std::vector<TensorSlot>& layout;
  const double* base;
  CMat m(Slot s) const {
    const auto& t = layout[s];
    return CMat(base + t.offset, t.rows, t.cols);
  }
  CVec v(Slot s) const {
    const auto& t = layout[s];
    return CVec(base + t.offset, static_cast<Eigen::Index>(t.size()));
  }
};

struct GradParams {
  const std::vector<TensorSlot>& layout;
  double* base;
  Mat m(Slot s) const {
    const auto& t = layout[s];
    return Mat(base + t.offset, t.rows, t.cols);
  }
  Vec v(Slot s) const {
    const auto& t = layout[s];
    return Vec(base + t.offset, static_cast<Eigen::Index>(t.size()));
  }
};

struct VocabLatents {
  RowMatrix h1;  // k x d
  RowMatrix q0;  // k x d
};

VocabLatents embed_vocab(const ConstParams& p, const RowMatrix& tau) {
  VocabLatents lat;
  RowMatrix pre = tau * p.m(kFc1W).transpose();
  pre.rowwise() += p.v(kFc1B).transpose();
  lat.h1 = pre.array().tanh().matrix();
  lat.q0 = lat.h1 * p.m(kFc2W).transpose();
  lat.q0.rowwise() += p.v(kFc2B).transpose();
  return lat;
}

struct Cache {
  Eigen::VectorXd ego;  // scaled ego status
  RowMatrix F;          // tokens x d
  RowMatrix Vp, Q, K, Vv, A, Vpp, Z, G;
  Eigen::VectorXd s_im;
  RowMatrix s_m;
};

Eigen::VectorXd scaled_ego(const Observation& obs) {
  Eigen::VectorXd e(kEgoStatusDim);
  for (int i = 0; i < kEgoStatusDim; ++i) e[i] = obs.ego_status[static_cast<std::size_t>(i)] * kEgoScale[static_cast<std::size_t>(i)];
  return e;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& g) {
  const double mx = g.maxCoeff();
  Eigen::VectorXd e = (g.array() - mx).exp().matrix();
  return e / e.sum();
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_observation(const ModelConfig& cfg, const Observation& obs) {
  if (obs.grid != cfg.grid || static_cast<int>(obs.raster.size()) != cfg.raster_inputs())
    throw ConfigError("forward: observation raster is " + std::to_string(obs.grid) +
                      "x" + std::to_string(obs.grid) + ", model expects " +
                      std::to_string(cfg.grid) + "x" + std::to_string(cfg.grid));
}

Cache forward_cached(const ModelConfig& cfg, const ConstParams& p, const VocabLatents& lat,
                     const Observation& obs) {
  check_observation(cfg, obs);
  const int T = cfg.tokens;
  const int d = cfg.dim;
  Cache c;
  const CVec x(obs.raster.data(), static_cast<Eigen::Index>(obs.raster.size()));
  Eigen::VectorXd pre_f = p.m(kEncW) * x + p.v(kEncB);
  pre_f = pre_f.array().tanh().matrix();
  c.F = Mat(pre_f.data(), T, d);

  c.ego = scaled_ego(obs);
  const Eigen::VectorXd E = p.m(kEgoW) * c.ego + p.v(kEgoB);
  c.Vp = lat.q0;
  c.Vp.rowwise() += E.transpose();

  c.Q = c.Vp * p.m(kQuery).transpose();
  c.K = c.F * p.m(kKey).transpose();
  c.Vv = c.F * p.m(kValue).transpose();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  c.A = (c.Q * c.K.transpose()) * inv_sqrt_d;
  for (Eigen::Index i = 0; i < c.A.rows(); ++i) {
    const double mx = c.A.row(i).maxCoeff();
    c.A.row(i) = (c.A.row(i).array() - mx).exp().matrix();
    c.A.row(i) /= c.A.row(i).sum();
  }
  c.Vpp = c.Vp + c.A * c.Vv;
  RowMatrix pre_z = c.Vpp * p.m(kTrunkW).transpose();
  pre_z.rowwise() += p.v(kTrunkB).transpose();
  c.Z = pre_z.array().tanh().matrix();
  c.G = c.Z * p.m(kHeadW).transpose();
  c.G.rowwise() += p.v(kHeadB).transpose();

  c.s_im = softmax(c.G.col(0));
  c.s_m.resize(c.G.rows(), c.G.cols() - 1);
  for (Eigen::Index i = 0; i < c.s_m.rows(); ++i)
    for (Eigen::Index m = 0; m < c.s_m.cols(); ++m) c.s_m(i, m) = sigmoid(c.G(i, m + 1));
  return c;
}

// Backpropagates dG through one scenario; accumulates parameter gradients
// and the gradient with respect to the shared vocabulary latents q0.
void backward_scenario(const ModelConfig& cfg, const ConstParams& p, const Cache& c,
                       const Observation& obs, const RowMatrix& dG, GradParams& g,
                       RowMatrix& dq0) {
  const int T = cfg.tokens;
  const int d = cfg.dim;
  g.m(kHeadW) += dG.transpose() * c.Z;
  g.v(kHeadB) += dG.colwise().sum().transpose();
  const RowMatrix dZ = dG * p.m(kHeadW);
  const RowMatrix dPz = (dZ.array() * (1.0 - c.Z.array().square())).matrix();
  g.m(kTrunkW) += dPz.transpose() * c.Vpp;
  g.v(kTrunkB) += dPz.colwise().sum().transpose();
  const RowMatrix dVpp = dPz * p.m(kTrunkW);

  RowMatrix dVp = dVpp;
  const RowMatrix dA = dVpp * c.Vv.transpose();
  const RowMatrix dVv = c.A.transpose() * dVpp;
  const Eigen::VectorXd row_dot = (c.A.array() * dA.array()).rowwise().sum();
  RowMatrix dL = c.A.array() * (dA.colwise() - row_dot).array();
  dL *= 1.0 / std::sqrt(static_cast<double>(d));
  const RowMatrix dQ = dL * c.K;
  const RowMatrix dK = dL.transpose() * c.Q;
  g.m(kQuery) += dQ.transpose() * c.Vp;
  dVp += dQ * p.m(kQuery);
  g.m(kKey) += dK.transpose() * c.F;
  g.m(kValue) += dVv.transpose() * c.F;
  RowMatrix dF = dK * p.m(kKey) + dVv * p.m(kValue);

  const Eigen::VectorXd dE = dVp.colwise().sum().transpose();
  g.m(kEgoW) += dE * c.ego.transpose();
  g.v(kEgoB) += dE;
  dq0 += dVp;

  dF.array() *= (1.0 - c.F.array().square());
  const Eigen::VectorXd dpre = Eigen::Map<const Eigen::VectorXd>(dF.data(), T * d);
  const CVec x(obs.raster.data(), static_cast<Eigen::Index>(obs.raster.size()));
  g.m(kEncW).noalias() += dpre * x.transpose();
  g.v(kEncB) += dpre;
}

void backward_vocab(const ConstParams& p, const VocabLatents& lat, const RowMatrix& tau,
                    const RowMatrix& dq0, GradParams& g) {
  g.m(kFc2W) += dq0.transpose() * lat.h1;
  g.v(kFc2B) += dq0.colwise().sum().transpose();
  RowMatrix dh1 = dq0 * p.m(kFc2W);
  dh1.array() *= (1.0 - lat.h1.array().square());
  g.m(kFc1W) += dh1.transpose() * tau;
  g.v(kFc1B) += dh1.colwise().sum().transpose();
}

PredictionBundle to_bundle(const Cache& c) { return {c.s_im, c.s_m}; }

void check_vocab(const ModelConfig& cfg, const RowMatrix& tau) {
  if (tau.rows() != cfg.vocab_size || tau.cols() != 3 * cfg.horizon)
    throw ConfigError("forward: vocabulary of " + std::to_string(tau.rows()) + " entries x " +
                      std::to_string(tau.cols()) + " features does not match model (k=" +
                      std::to_string(cfg.vocab_size) + ", H=" + std::to_string(cfg.horizon) + ")");
}

}  // namespace

std::vector<TensorSlot> parameter_layout(const ModelConfig& cfg) {
  const int d = cfg.dim;
  const int heads = 1 + cfg.metric_heads();
  std::vector<TensorSlot> l = {
      {"encoder.weight", cfg.tokens * d, cfg.raster_inputs()},
      {"encoder.bias", cfg.tokens * d, 1},
      {"ego_proj.weight", d, kEgoStatusDim},
      {"ego_proj.bias", d, 1},
      {"vocab_embed.fc1.weight", d, 3 * cfg.horizon},
      {"vocab_embed.fc1.bias", d, 1},
      {"vocab_embed.fc2.weight", d, d},
      {"vocab_embed.fc2.bias", d, 1},
      {"attention.query", d, d},
      {"attention.key", d, d},
      {"attention.value", d, d},
      {"trunk.weight", d, d},
      {"trunk.bias", d, 1},
      {"heads.weight", heads, d},
      {"heads.bias", heads, 1},
  };
  std::size_t off = 0;
  for (auto& t : l) {
    t.offset = off;
    off += t.size();
  }
  return l;
}

StudentModel::StudentModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  layout_ = parameter_layout(cfg_);
  params_.assign(layout_.back().offset + layout_.back().size(), 0.0);
}

StudentModel StudentModel::initialized(const ModelConfig& cfg, std::uint64_t seed) {
  StudentModel m(cfg);
  std::mt19937_64 rng(seed);
  for (const TensorSlot& t : m.layout_) {
    if (t.cols == 1) continue;  // biases stay zero
    const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < t.size(); ++i) m.params_[t.offset + i] = u(rng);
  }
  return m;
}

const TensorSlot& StudentModel::slot(const std::string& role) const {
  for (const auto& t : layout_)
    if (t.role == role) return t;
  throw ConfigError("no parameter tensor named '" + role + "'");
}

RowMatrix vocabulary_features(const Vocabulary& vocab, const ModelConfig& cfg) {
  RowMatrix tau(static_cast<Eigen::Index>(vocab.size()), 3 * vocab.horizon);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto& poses = vocab[i].poses;
    for (std::size_t j = 0; j < poses.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(3 * j);
      tau(r, c) = poses[j].x * cfg.traj_scale;
      tau(r, c + 1) = poses[j].y * cfg.traj_scale;
      tau(r, c + 2) = poses[j].heading;
    }
  }
  return tau;
}

PredictionBundle forward(const StudentModel& model, const Observation& obs,
                         const RowMatrix& vocab_features) {
  const ModelConfig& cfg = model.config();
  check_vocab(cfg, vocab_features);
  const ConstParams p{model.layout(), model.parameters().data()};
  const VocabLatents lat = embed_vocab(p, vocab_features);
  return to_bundle(forward_cached(cfg, p, lat, obs));
}

PredictionBundle forward(const StudentModel& model, const Observation& obs, const Vocabulary& vocab) {
  return forward(model, obs, vocabulary_features(vocab, model.config()));
}

ImitationTarget imitation_target(const Vocabulary& vocab, const Trajectory& expert, double sigma) {
  if (vocab.size() == 0) throw ConfigError("imitation_target: empty vocabulary");
  if (!(sigma > 0.0)) throw ConfigError("imitation_target: sigma must be positive");
  Eigen::VectorXd logits(static_cast<Eigen::Index>(vocab.size()));
  for (std::size_t i = 0; i < vocab.size(); ++i)
    logits[static_cast<Eigen::Index>(i)] =
        -squared_distance(expert, vocab[i], vocab.heading_weight) / (sigma * sigma);
  return {softmax(logits)};
}

double median_pairwise_distance(const Vocabulary& vocab) {
  std::vector<double> d;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    for (std::size_t j = i + 1; j < vocab.size(); ++j)
      d.push_back(std::sqrt(squared_distance(vocab[i], vocab[j], vocab.heading_weight)));
  if (d.empty()) return 1.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  const double m = d[mid];
  return m > 0.0 ? m : 1.0;
}

double imitation_loss(const PredictionBundle& bundle, const ImitationTarget& target) {
  if (bundle.imitation.size() != target.y.size())
    throw ConfigError("imitation_loss: size mismatch");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < target.y.size(); ++i)
    loss -= target.y[i] * std::log(std::clamp(bundle.imitation[i], kLogClamp, 1.0));
  return loss;
}

RowMatrix distillation_targets(const TeacherLabels& labels, DistillationTarget target) {
  const auto k = static_cast<Eigen::Index>(labels.scores.size());
  if (target == DistillationTarget::kPdmOnly) {
    RowMatrix t(k, 1);
    for (Eigen::Index i = 0; i < k; ++i) t(i, 0) = pdm_score(labels.scores[static_cast<std::size_t>(i)]);
    return t;
  }
  RowMatrix t(k, static_cast<Eigen::Index>(kNumMetrics));
  for (Eigen::Index i = 0; i < k; ++i)
    for (std::size_t m = 0; m < kNumMetrics; ++m)
      t(i, static_cast<Eigen::Index>(m)) = labels.scores[static_cast<std::size_t>(i)][m];
  return t;
}

double distillation_loss(const PredictionBundle& bundle, const RowMatrix& targets) {
  if (bundle.metric_scores.rows() != targets.rows() || bundle.metric_scores.cols() != targets.cols())
    throw ConfigError("distillation_loss: shape mismatch");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    for (Eigen::Index m = 0; m < targets.cols(); ++m) {
      const double s = std::clamp(bundle.metric_scores(i, m), kLogClamp, 1.0 - kLogClamp);
      const double y = targets(i, m);
      loss -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
    }
  }
  return loss / static_cast<double>(targets.size());
}

LossReport compute_gradients(const StudentModel& model, const RowMatrix& vocab_features,
                             std::span<const TrainingExample> batch, double lambda_kd,
                             std::vector<double>& grad) {
  const ModelConfig& cfg = model.config();
  check_vocab(cfg, vocab_features);
  if (batch.empty()) throw ConfigError("compute_gradients: empty batch");
  grad.assign(model.parameters().size(), 0.0);
  const ConstParams p{model.layout(), model.parameters().data()};
  GradParams g{model.layout(), grad.data()};
  const VocabLatents lat = embed_vocab(p, vocab_features);
  RowMatrix dq0 = RowMatrix::Zero(lat.q0.rows(), lat.q0.cols());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const auto k = vocab_features.rows();
  const int heads = cfg.metric_heads();

  LossReport report;
  for (const TrainingExample& ex : batch) {
    const Cache c = forward_cached(cfg, p, lat, *ex.observation);
    const PredictionBundle b = to_bundle(c);
    const double l_im = imitation_loss(b, *ex.target);
    report.imitation += inv_b * l_im;

    RowMatrix dG = RowMatrix::Zero(k, 1 + heads);
    // Imitation: d/dS of -sum y log clamp(S), then through the softmax.
    Eigen::VectorXd dS(k);
    for (Eigen::Index i = 0; i < k; ++i)
      dS[i] = c.s_im[i] > kLogClamp ? -ex.target->y[i] / c.s_im[i] : 0.0;
    const double sdot = c.s_im.dot(dS);
    dG.col(0) = inv_b * (c.s_im.array() * (dS.array() - sdot)).matrix();

    if (lambda_kd != 0.0) {
      if (ex.teacher == nullptr || ex.teacher->rows() != k || ex.teacher->cols() != heads)
        throw ConfigError("compute_gradients: teacher targets do not match the head layout");
      const double l_kd = distillation_loss(b, *ex.teacher);
      report.distillation += inv_b * l_kd;
      const double scale = inv_b * lambda_kd / static_cast<double>(k * heads);
      for (Eigen::Index i = 0; i < k; ++i) {
        for (int m = 0; m < heads; ++m) {
          const double s = c.s_m(i, m);
          if (s <= kLogClamp || s >= 1.0 - kLogClamp) continue;
          dG(i, m + 1) = scale * (s - (*ex.teacher)(i, m));
        }
      }
    } else if (ex.teacher != nullptr && ex.teacher->cols() == heads && ex.teacher->rows() == k) {
      report.distillation += inv_b * distillation_loss(b, *ex.teacher);
    }
    backward_scenario(cfg, p, c, *ex.observation, dG, g, dq0);
  }
  backward_vocab(p, lat, vocab_features, dq0, g);
  report.total = report.imitation + lambda_kd * report.distillation;
  return report;
}

LossReport train_step(StudentModel& model, const RowMatrix& vocab_features,
                      std::span<const TrainingExample> batch, AdamState& opt,
                      const AdamConfig& adam, double lambda_kd) {
  std::vector<double> grad;
  const LossReport report = compute_gradients(model, vocab_features, batch, lambda_kd, grad);
  if (!std::isfinite(report.total))
    throw NumericError("train_step: non-finite loss (imitation=" + std::to_string(report.imitation) +
                       ", distillation=" + std::to_string(report.distillation) + ")");
  for (const TensorSlot& t : model.layout())
    for (std::size_t i = 0; i < t.size(); ++i)
      if (!std::isfinite(grad[t.offset + i]))
        throw NumericError("train_step: non-finite gradient in tensor '" + t.role + "'");

  auto& w = model.parameters();
  if (opt.m.size() != w.size()) {
    opt.m.assign(w.size(), 0.0);
    opt.v.assign(w.size(), 0.0);
    opt.step = 0;
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    opt.m[i] = adam.beta1 * opt.m[i] + (1.0 - adam.beta1) * grad[i];
    opt.v[i] = adam.beta2 * opt.v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
    const double mhat = opt.m[i] / bc1;
    const double vhat = opt.v[i] / bc2;
    w[i] -= adam.lr * (mhat / (std::sqrt(vhat) + adam.eps) + adam.weight_decay * w[i]);
  }
  for (const TensorSlot& t : model.layout())
    for (std::size_t i = 0; i < t.size(); ++i)
      if (!std::isfinite(w[t.offset + i]))
        throw NumericError("train_step: non-finite parameter in tensor '" + t.role + "' after update");
  return report;
}

}  // namespace hydra
