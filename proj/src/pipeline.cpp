#include "hydra/pipeline.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <set>
#include <sstream>

#include "hydra/common.hpp"
#include "hydra/io.hpp"
#include "json.hpp"

namespace hydra {

using nlohmann::json;

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::kImitationOnly: return "imitation-only";
    case Ablation::kPostProcess: return "post-process";
    case Ablation::kPdmOnly: return "pdm-only";
    case Ablation::kMultiTarget: return "multi-target";
    case Ablation::kWeighted: return "weighted";
    case Ablation::kEnsemble: return "ensemble";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::kImitationOnly, Ablation::kPostProcess, Ablation::kPdmOnly,
                     Ablation::kMultiTarget, Ablation::kWeighted, Ablation::kEnsemble})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown ablation '" + s + "'");
}

// ---- configuration ------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (trim(v.substr(pos)).empty()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (trim(v.substr(pos)).empty()) return i;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const long long i = to_int(key, v);
  if (i < 0) throw ConfigError("config: '" + key + "' must be non-negative");
  return static_cast<std::uint64_t>(i);
}

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool affects_artifacts = true;
};

Binding bind(const char* sec, const char* key, double& ref) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, [&ref, name](const std::string& v) { ref = to_double(name, v); },
          [&ref] { return fmt_double(ref); }};
}

Binding bind(const char* sec, const char* key, int& ref) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, [&ref, name](const std::string& v) { ref = static_cast<int>(to_int(name, v)); },
          [&ref] { return std::to_string(ref); }};
}

Binding bind(const char* sec, const char* key, std::uint64_t& ref) {
  const std::string name = std::string(sec) + "." + key;
  return {sec, key, [&ref, name](const std::string& v) { ref = to_u64(name, v); },
          [&ref] { return std::to_string(ref); }};
}

std::vector<Binding> bindings(PipelineConfig& c) {
  ExperimentConfig& e = c.experiment;
  std::vector<Binding> b;
  b.push_back(bind("run", "seed", e.data_seed));
  b.push_back({"run", "model_seeds",
               [&e](const std::string& v) {
                 e.model_seeds.clear();
                 for (const auto& s : split_list(v)) e.model_seeds.push_back(to_u64("run.model_seeds", s));
               },
               [&e] {
                 return join<std::uint64_t>(e.model_seeds, [](const std::uint64_t& s) { return std::to_string(s); });
               }});
  b.push_back({"run", "stages",
               [&c](const std::string& v) {
                 c.stages = split_list(v);
               },
               [&c] { return join<std::string>(c.stages, [](const std::string& s) { return s; }); }, false});
  b.push_back({"run", "ablations",
               [&c](const std::string& v) {
                 c.ablations.clear();
                 for (const auto& s : split_list(v)) c.ablations.push_back(parse_ablation(s));
               },
               [&c] { return join<Ablation>(c.ablations, [](const Ablation& a) { return std::string(to_string(a)); }); },
               false});

  b.push_back(bind("splits", "train", e.splits.train));
  b.push_back(bind("splits", "val", e.splits.val));
  b.push_back(bind("splits", "test", e.splits.test));

  WorldConfig& w = e.world;
  b.push_back(bind("world", "horizon", w.horizon));
  b.push_back(bind("world", "dt", w.dt));
  b.push_back(bind("world", "road_width_min", w.road_width_min));
  b.push_back(bind("world", "road_width_max", w.road_width_max));
  b.push_back(bind("world", "curvature_max", w.curvature_max));
  b.push_back(bind("world", "straight_fraction", w.straight_fraction));
  b.push_back(bind("world", "agents_min", w.agents_min));
  b.push_back(bind("world", "agents_max", w.agents_max));
  b.push_back(bind("world", "ego_speed_min", w.ego_speed_min));
  b.push_back(bind("world", "ego_speed_max", w.ego_speed_max));
  b.push_back(bind("world", "agent_speed_max", w.agent_speed_max));
  b.push_back(bind("world", "route_behind", w.route_behind));
  b.push_back(bind("world", "route_ahead", w.route_ahead));
  b.push_back(bind("world", "route_spacing", w.route_spacing));
  b.push_back(bind("world", "ego_half_length", w.ego_footprint.half_length));
  b.push_back(bind("world", "ego_half_width", w.ego_footprint.half_width));
  b.push_back(bind("world", "expert_accel_max", w.expert_accel_max));
  b.push_back(bind("world", "expert_decel_max", w.expert_decel_max));
  b.push_back(bind("world", "expert_jerk_max", w.expert_jerk_max));
  b.push_back(bind("world", "expert_yaw_rate_max", w.expert_yaw_rate_max));

  b.push_back(bind("raster", "grid", e.raster.grid));
  b.push_back(bind("raster", "cell_size", e.raster.cell_size));
  b.push_back(bind("noise", "dropout", e.noise.dropout));
  b.push_back(bind("noise", "additive", e.noise.additive));

  VocabConfig& v = e.vocab;
  b.push_back(bind("vocab", "samples", v.samples));
  b.push_back(bind("vocab", "sample_seed", v.sample_seed));
  b.push_back(bind("vocab", "k", v.kmeans.k));
  b.push_back(bind("vocab", "max_iters", v.kmeans.max_iters));
  b.push_back(bind("vocab", "tol", v.kmeans.tol));
  b.push_back(bind("vocab", "kmeans_seed", v.kmeans.seed));
  b.push_back(bind("vocab", "heading_weight", v.kmeans.heading_weight));
  b.push_back(bind("vocab", "speed_min", v.kinematics.speed_min));
  b.push_back(bind("vocab", "speed_max", v.kinematics.speed_max));
  b.push_back(bind("vocab", "accel_max", v.kinematics.accel_max));
  b.push_back(bind("vocab", "yaw_rate_max", v.kinematics.yaw_rate_max));
  b.push_back(bind("vocab", "accel_segments", v.kinematics.accel_segments));
  b.push_back(bind("vocab", "yaw_segments", v.kinematics.yaw_segments));
  b.push_back(bind("vocab", "min_turn_radius", v.kinematics.min_turn_radius));

  MetricsConfig& m = e.metrics;
  b.push_back(bind("metrics", "ttc_horizon", m.ttc_horizon));
  b.push_back(bind("metrics", "progress_epsilon", m.progress_epsilon));
  b.push_back(bind("metrics", "accel_max", m.comfort.accel_max));
  b.push_back(bind("metrics", "jerk_max", m.comfort.jerk_max));
  b.push_back(bind("metrics", "yaw_rate_max", m.comfort.yaw_rate_max));
  b.push_back(bind("metrics", "ego_half_length", m.ego_footprint.half_length));
  b.push_back(bind("metrics", "ego_half_width", m.ego_footprint.half_width));

  b.push_back(bind("model", "tokens", e.model.tokens));
  b.push_back(bind("model", "dim", e.model.dim));
  b.push_back(bind("model", "traj_scale", e.model.traj_scale));

  b.push_back(bind("train", "lr", e.adam.lr));
  b.push_back(bind("train", "beta1", e.adam.beta1));
  b.push_back(bind("train", "beta2", e.adam.beta2));
  b.push_back(bind("train", "eps", e.adam.eps));
  b.push_back(bind("train", "weight_decay", e.adam.weight_decay));
  b.push_back(bind("train", "epochs", e.epochs));
  b.push_back(bind("train", "batch", e.batch));
  b.push_back(bind("train", "lambda_kd", e.lambda_kd));
  b.push_back(bind("train", "sigma", e.sigma));

  b.push_back(bind("infer", "w1", e.default_weights.w1));
  b.push_back(bind("infer", "w2", e.default_weights.w2));
  b.push_back(bind("infer", "w3", e.default_weights.w3));
  b.push_back(bind("infer", "w4", e.default_weights.w4));
  b.push_back(bind("infer", "grid_points", c.grid_points));
  static const char* lo[4] = {"w1_min", "w2_min", "w3_min", "w4_min"};
  static const char* hi[4] = {"w1_max", "w2_max", "w3_max", "w4_max"};
  for (int i = 0; i < 4; ++i) {
    b.push_back(bind("infer", lo[i], c.grid_lo[static_cast<std::size_t>(i)]));
    b.push_back(bind("infer", hi[i], c.grid_hi[static_cast<std::size_t>(i)]));
  }
  return b;
}

}  // namespace

void PipelineConfig::resolve() {
  ExperimentConfig& e = experiment;
  e.vocab.kinematics.horizon = e.world.horizon;
  e.vocab.kinematics.dt = e.world.dt;
  e.model.horizon = e.world.horizon;
  e.model.grid = e.raster.grid;
  e.model.vocab_size = static_cast<int>(e.vocab.kmeans.k);
  if (grid_points < 1) throw ConfigError("infer.grid_points must be >= 1");
  for (std::size_t i = 0; i < 4; ++i) e.grid.axes[i] = log_grid(grid_lo[i], grid_hi[i], grid_points);
  e.validate();
  for (const auto& s : stages)
    if (std::find(all_stages().begin(), all_stages().end(), s) == all_stages().end())
      throw ConfigError("unknown stage '" + s + "'");
  if (ablations.empty()) throw ConfigError("run.ablations must name at least one ablation");
}

PipelineConfig parse_config(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  PipelineConfig cfg;
  auto b = bindings(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key '" + section + "' must live inside a section");
    for (const auto& [key, value] : body) {
      auto it = std::find_if(b.begin(), b.end(),
                             [&](const Binding& x) { return x.section == section && x.key == key; });
      if (it == b.end()) throw ConfigError("config: unknown setting '" + section + "." + key + "'");
      it->set(trim(value.data()));
    }
  }
  cfg.resolve();
  return cfg;
}

PipelineConfig load_config(const fs::path& p) { return parse_config(io::read_file(p)); }

std::string canonical_config(const PipelineConfig& cfg) {
  PipelineConfig copy = cfg;
  std::vector<std::string> lines;
  for (const Binding& b : bindings(copy)) lines.push_back(b.section + "." + b.key + " = " + b.get());
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

// ---- pipeline internals ---------------------------------------------------------

namespace {

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Settings lines for the given sections, the part of the config a stage depends on.
std::string settings(const PipelineConfig& cfg, std::initializer_list<const char*> keys) {
  PipelineConfig copy = cfg;
  std::string out;
  for (const Binding& b : bindings(copy)) {
    if (!b.affects_artifacts) continue;
    const std::string full = b.section + "." + b.key;
    for (const char* k : keys) {
      const std::string_view kv(k);
      const bool match = kv.back() == '.' ? full.starts_with(kv) : full == kv;
      if (match) {
        out += full + "=" + b.get() + "\n";
        break;
      }
    }
  }
  return out;
}

std::uint64_t hash_of(std::initializer_list<std::string_view> parts) {
  Fnv1a h;
  for (auto p : parts) {
    h.update(p);
    h.update("\x1f");
  }
  return h.digest();
}

DistillationTarget target_for(Ablation a) {
  switch (a) {
    case Ablation::kImitationOnly:
    case Ablation::kPostProcess: return DistillationTarget::kNone;
    case Ablation::kPdmOnly: return DistillationTarget::kPdmOnly;
    default: return DistillationTarget::kMultiTarget;
  }
}

std::string model_name(DistillationTarget t, std::uint64_t seed) {
  return std::string(to_string(t)) + "-s" + std::to_string(seed);
}

const Split kSplits[] = {Split::kTrain, Split::kVal, Split::kTest};

}  // namespace

struct Pipeline::Impl {
  Pipeline& p;
  json manifest;

  struct Unit {
    std::string name;
    std::uint64_t key = 0;
    std::vector<std::string> outputs;  // relative to the run directory
    std::function<void()> run;
  };

  explicit Impl(Pipeline& pl) : p(pl) {
    const fs::path mp = p.manifest_path();
    if (fs::exists(mp)) {
      try {
        manifest = json::parse(io::read_file(mp));
      } catch (const json::exception& e) {
        throw IntegrityError("manifest is not valid JSON: " + std::string(e.what()));
      }
    }
    if (!manifest.is_object()) manifest = json::object();
    if (!manifest.contains("units")) manifest["units"] = json::object();
    if (!manifest.contains("created")) manifest["created"] = now_utc();
    manifest["tool"] = kToolVersion;
    manifest["config_hash"] = hex64(fnv1a(canonical_config(p.cfg_)));
  }

  void log(const std::string& s) const {
    if (p.log_) p.log_(s);
  }

  fs::path path(const std::string& rel) const { return p.dir_ / rel; }

  void save() {
    manifest["updated"] = now_utc();
    io::write_file(p.manifest_path(), manifest.dump(2) + "\n");
  }

  // Hash over a unit's recorded outputs after checking they are still intact.
  std::uint64_t require(const std::string& unit_id) const {
    const auto& units = manifest.at("units");
    if (!units.contains(unit_id))
      throw IntegrityError("missing upstream artifact '" + unit_id + "'; run stage '" +
                           unit_id.substr(0, unit_id.find('/')) + "' first");
    const std::string rerun = "; rerun stage '" + unit_id.substr(0, unit_id.find('/')) + "'";
    Fnv1a h;
    for (const auto& [rel, hex] : units.at(unit_id).at("outputs").items()) {
      const fs::path f = path(rel);
      if (!fs::exists(f))
        throw IntegrityError("artifact " + rel + " recorded in the manifest is missing" + rerun);
      const std::uint64_t actual = io::file_hash(f);
      if (hex64(actual) != hex.get<std::string>())
        throw IntegrityError("artifact " + rel + " was modified (hash " + hex64(actual) + ", manifest " +
                             hex.get<std::string>() + ")" + rerun);
      h.update(rel);
      h.update_pod(actual);
    }
    return h.digest();
  }

  std::uint64_t output_hash(const std::string& unit_id, const std::string& rel) const {
    require(unit_id);
    return parse_hex64(manifest.at("units").at(unit_id).at("outputs").at(rel).get<std::string>());
  }

  bool cached(const std::string& unit_id, std::uint64_t key) const {
    const auto& units = manifest.at("units");
    if (!units.contains(unit_id)) return false;
    const auto& u = units.at(unit_id);
    if (u.at("key").get<std::string>() != hex64(key)) return false;
    for (const auto& [rel, hex] : u.at("outputs").items()) {
      const fs::path f = path(rel);
      if (!fs::exists(f) || hex64(io::file_hash(f)) != hex.get<std::string>()) return false;
    }
    return true;
  }

  StageResult execute(const std::string& stage, std::vector<Unit> units) {
    StageResult r;
    r.stage = stage;
    for (Unit& u : units) {
      const std::string id = stage + "/" + u.name;
      if (cached(id, u.key)) {
        log("[" + stage + "] " + u.name + ": cached");
        ++r.units_cached;
        continue;
      }
      log("[" + stage + "] " + u.name + ": running");
      const std::string started = now_utc();
      u.run();
      json outs = json::object();
      for (const auto& rel : u.outputs) outs[rel] = hex64(io::file_hash(path(rel)));
      manifest["units"][id] = {{"key", hex64(u.key)}, {"outputs", outs}, {"started", started},
                               {"finished", now_utc()}};
      save();
      ++r.units_run;
    }
    return r;
  }

  const ExperimentConfig& ex() const { return p.cfg_.experiment; }

  // ---- artifact layout ----
  static std::string split_file(Split s, const char* ext) { return std::string("data/") + to_string(s) + ext; }
  static std::string label_bin(Split s) { return std::string("labels/") + to_string(s) + ".labels.bin"; }
  static std::string label_index(Split s) { return std::string("labels/") + to_string(s) + ".labels.json"; }
  static std::string ckpt(const std::string& model, const char* which) {
    return "checkpoints/" + model + "." + which + ".ckpt";
  }

  Vocabulary load_vocab() const {
    require("vocab/vocabulary");
    return io::read_vocabulary(path("vocab/vocabulary.bin"));
  }

  std::uint64_t vocab_hash() const { return output_hash("vocab/vocabulary", "vocab/vocabulary.bin"); }

  std::vector<Sample> load_split(Split s, bool with_labels, std::uint64_t vh) const {
    auto scen = io::read_scenarios(path(split_file(s, ".scn.jsonl")));
    auto obs = io::read_observations(path(split_file(s, ".obs.bin")));
    auto tgt = io::read_targets(path(split_file(s, ".target.bin")));
    if (obs.size() != scen.size() || tgt.size() != scen.size())
      throw IntegrityError(std::string("dataset split '") + to_string(s) + "' has inconsistent stores");
    std::vector<TeacherLabels> labels;
    if (with_labels) {
      labels = io::read_labels(path(label_bin(s)), path(label_index(s)), vh);
      if (labels.size() != scen.size()) throw IntegrityError("label store does not cover the split");
    }
    std::vector<Sample> out(scen.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].scenario = std::move(scen[i]);
      out[i].observation = std::move(obs[i]);
      out[i].target = std::move(tgt[i]);
      if (with_labels) {
        if (labels[i].scenario_id != out[i].scenario.id)
          throw IntegrityError("label store order does not match scenarios");
        out[i].labels = std::move(labels[i]);
      }
    }
    return out;
  }

  Dataset load_dataset(std::uint64_t vh) const {
    Dataset d;
    d.vocab_hash = vh;
    d.train = load_split(Split::kTrain, true, vh);
    d.val = load_split(Split::kVal, true, vh);
    d.test = load_split(Split::kTest, true, vh);
    return d;
  }

  std::vector<DistillationTarget> needed_targets() const {
    std::vector<DistillationTarget> out;
    for (Ablation a : p.cfg_.ablations) {
      const DistillationTarget t = target_for(a);
      if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  bool wants(Ablation a) const {
    return std::find(p.cfg_.ablations.begin(), p.cfg_.ablations.end(), a) != p.cfg_.ablations.end();
  }

  // ---- stages ----

  StageResult stage_vocab() {
    Unit u;
    u.name = "vocabulary";
    u.key = hash_of({"vocab", settings(p.cfg_, {"vocab.", "world.horizon", "world.dt"})});
    u.outputs = {"vocab/vocabulary.bin", "vocab/vocabulary.bin.json"};
    u.run = [this] {
      const VocabConfig& vc = ex().vocab;
      const auto samples = sample_trajectories(vc.samples, vc.kinematics, vc.sample_seed);
      const KMeansResult km = kmeans_cluster(samples, vc.kmeans);
      io::VocabProvenance prov{vc.samples, vc.sample_seed, vc.kmeans.seed, vc.kinematics, km.iterations, km.sse};
      io::write_vocabulary(path("vocab/vocabulary.bin"), km.vocabulary, prov);
    };
    StageResult r = execute("vocab", {u});
    manifest["vocab_hash"] = hex64(vocab_hash());
    save();
    return r;
  }

  StageResult stage_build_data() {
    Unit u;
    u.name = "dataset";
    u.key = hash_of({"build-data", hex64(require("vocab/vocabulary")),
                     settings(p.cfg_, {"run.seed", "splits.", "world.", "raster.", "noise.", "train.sigma"})});
    for (Split s : kSplits)
      for (const char* ext : {".scn.jsonl", ".obs.bin", ".target.bin"}) u.outputs.push_back(split_file(s, ext));
    u.run = [this] {
      const Vocabulary vocab = load_vocab();
      const double sigma = resolve_sigma(ex(), vocab);
      for (Split s : kSplits) {
        const std::size_t n = static_cast<std::size_t>(split_size(ex(), s));
        std::vector<Scenario> scen(n);
        std::vector<Observation> obs(n);
        std::vector<ImitationTarget> tgt(n);
        parallel_for(n, [&](std::size_t i) {
          scen[i] = generate_scenario(scenario_seed(ex(), s, i), ex().world);
          obs[i] = render_observation(scen[i], ex().raster, ex().noise, observation_seed(scen[i].id));
          tgt[i] = imitation_target(vocab, expert_in_ego_frame(scen[i]), sigma);
        });
        io::write_scenarios(path(split_file(s, ".scn.jsonl")), scen);
        io::write_observations(path(split_file(s, ".obs.bin")), obs);
        io::write_targets(path(split_file(s, ".target.bin")), tgt, sigma);
      }
    };
    StageResult r = execute("build-data", {u});
    manifest["dataset_hash"] = hex64(require("build-data/dataset"));
    save();
    return r;
  }

  StageResult stage_simulate() {
    const std::uint64_t vh = vocab_hash();
    Unit u;
    u.name = "labels";
    u.key = hash_of({"simulate", hex64(require("vocab/vocabulary")), hex64(require("build-data/dataset")),
                     settings(p.cfg_, {"metrics."})});
    for (Split s : kSplits) {
      u.outputs.push_back(label_bin(s));
      u.outputs.push_back(label_index(s));
    }
    u.run = [this, vh] {
      const Vocabulary vocab = load_vocab();
      for (Split s : kSplits) {
        const auto scen = io::read_scenarios(path(split_file(s, ".scn.jsonl")));
        std::vector<TeacherLabels> labels(scen.size());
        for (std::size_t i = 0; i < scen.size(); ++i)
          labels[i] = simulate_vocabulary(scen[i], vocab, vh, ex().metrics);
        io::write_labels(path(label_bin(s)), path(label_index(s)), labels);
      }
    };
    StageResult r = execute("simulate", {u});
    manifest["label_hash"] = hex64(require("simulate/labels"));
    save();
    return r;
  }

  StageResult stage_fit() {
    const std::uint64_t vh = vocab_hash();
    const std::uint64_t data_h = require("build-data/dataset");
    // A label store that no longer matches the manifest is refused here.
    const std::uint64_t label_h = require("simulate/labels");
    std::vector<Unit> units;
    std::shared_ptr<Dataset> data;
    std::shared_ptr<Vocabulary> vocab;
    auto ensure_loaded = [&, this] {
      if (data) return;
      vocab = std::make_shared<Vocabulary>(load_vocab());
      data = std::make_shared<Dataset>(load_dataset(vh));
      data->sigma = resolve_sigma(ex(), *vocab);
    };
    for (DistillationTarget t : needed_targets()) {
      for (std::uint64_t seed : ex().model_seeds) {
        Unit u;
        u.name = model_name(t, seed);
        u.key = hash_of({"fit", hex64(data_h), hex64(label_h), hex64(vh), to_string(t), std::to_string(seed),
                         settings(p.cfg_, {"model.", "train.", "infer.w1", "infer.w2", "infer.w3", "infer.w4",
                                           "metrics."})});
        u.outputs = {ckpt(u.name, "best"), ckpt(u.name, "final"), "curves/" + u.name + ".csv"};
        u.run = [this, t, seed, name = u.name, &ensure_loaded, &data, &vocab] {
          ensure_loaded();
          const FitResult f = fit(ex(), *data, *vocab, t, seed);
          if (f.best_val_pdm < f.curve.back().val_pdm)
            throw Error("best checkpoint scores below the final one on validation");
          io::write_checkpoint(path(ckpt(name, "best")), f.best);
          io::write_checkpoint(path(ckpt(name, "final")), f.final_model);
          io::write_file(path("curves/" + name + ".csv"), io::curve_csv(f.curve));
          log("[fit] " + name + ": best epoch " + std::to_string(f.best_epoch) + ", validation PDM " +
              std::to_string(f.best_val_pdm));
        };
        units.push_back(std::move(u));
      }
    }
    return execute("fit", std::move(units));
  }

  std::string best_ckpt_unit(DistillationTarget t, std::uint64_t seed) const {
    return "fit/" + model_name(t, seed);
  }

  StudentModel load_model(DistillationTarget t, std::uint64_t seed) const {
    require(best_ckpt_unit(t, seed));
    return io::read_checkpoint(path(ckpt(model_name(t, seed), "best")));
  }

  std::vector<std::uint64_t> ensemble_seeds() const { return ex().model_seeds; }

  std::string ensemble_key_part() const {
    std::string s;
    for (std::uint64_t seed : ensemble_seeds())
      s += hex64(output_hash(best_ckpt_unit(DistillationTarget::kMultiTarget, seed),
                             ckpt(model_name(DistillationTarget::kMultiTarget, seed), "best")));
    return s;
  }

  std::vector<ModelRef> ensemble_refs(const std::vector<StudentModel>& models) const {
    std::vector<ModelRef> refs;
    const double w = 1.0 / static_cast<double>(models.size());
    for (const auto& m : models) refs.push_back({&m, w});
    return refs;
  }

  StageResult stage_search_weights() {
    const std::uint64_t vh = vocab_hash();
    const std::uint64_t label_h = require("simulate/labels");
    const std::string grid = settings(p.cfg_, {"infer.grid_points", "infer.w1_", "infer.w2_", "infer.w3_", "infer.w4_"});
    std::vector<Unit> units;
    auto val = std::make_shared<std::vector<Sample>>();
    auto vocab = std::make_shared<Vocabulary>();
    auto load = [this, val, vocab, vh] {
      if (!val->empty()) return;
      *vocab = load_vocab();
      *val = load_split(Split::kVal, true, vh);
    };
    if (wants(Ablation::kWeighted)) {
      for (std::uint64_t seed : ex().model_seeds) {
        const std::string name = model_name(DistillationTarget::kMultiTarget, seed);
        Unit u;
        u.name = name;
        u.key = hash_of({"search-weights", hex64(label_h), grid,
                         hex64(output_hash(best_ckpt_unit(DistillationTarget::kMultiTarget, seed), ckpt(name, "best")))});
        u.outputs = {"weights/" + name + ".weights"};
        u.run = [this, seed, name, load, val, vocab] {
          load();
          const StudentModel m = load_model(DistillationTarget::kMultiTarget, seed);
          const ModelRef ref{&m, 1.0};
          const GridSearchResult g = search_weights({&ref, 1}, *val, *vocab, ex().grid);
          io::write_weights(path("weights/" + name + ".weights"), g.best);
        };
        units.push_back(std::move(u));
      }
    }
    if (wants(Ablation::kEnsemble)) {
      Unit u;
      u.name = "ensemble";
      u.key = hash_of({"search-weights", hex64(label_h), grid, ensemble_key_part()});
      u.outputs = {"weights/ensemble.weights"};
      u.run = [this, load, val, vocab] {
        load();
        std::vector<StudentModel> models;
        for (std::uint64_t seed : ensemble_seeds()) models.push_back(load_model(DistillationTarget::kMultiTarget, seed));
        const auto refs = ensemble_refs(models);
        const GridSearchResult g = search_weights(refs, *val, *vocab, ex().grid);
        io::write_weights(path("weights/ensemble.weights"), g.best);
      };
      units.push_back(std::move(u));
    }
    return execute("search-weights", std::move(units));
  }

  struct EvalSpec {
    std::string name;
    Ablation row;
    std::uint64_t seed = 0;  // unused by the ensemble row
  };

  std::vector<EvalSpec> eval_specs() const {
    std::vector<EvalSpec> out;
    for (Ablation a : p.cfg_.ablations) {
      if (a == Ablation::kEnsemble) {
        out.push_back({"ensemble", a, 0});
        continue;
      }
      for (std::uint64_t seed : ex().model_seeds)
        out.push_back({std::string(to_string(a)) + "-s" + std::to_string(seed), a, seed});
    }
    return out;
  }

  StageResult stage_eval() {
    const std::uint64_t vh = vocab_hash();
    const std::uint64_t data_h = require("build-data/dataset");
    const std::uint64_t label_h = require("simulate/labels");
    const std::string shared = settings(p.cfg_, {"infer.w1", "infer.w2", "infer.w3", "infer.w4", "metrics.", "noise."});
    auto test = std::make_shared<std::vector<Sample>>();
    auto vocab = std::make_shared<Vocabulary>();
    auto load = [this, test, vocab, vh] {
      if (!test->empty()) return;
      *vocab = load_vocab();
      *test = load_split(Split::kTest, true, vh);
    };
    std::vector<Unit> units;
    auto report_outputs = [](const std::string& name) {
      return std::vector<std::string>{"reports/" + name + ".csv", "reports/" + name + ".json"};
    };
    auto write_report = [this](const std::string& name, const EvalReport& r) {
      io::write_file(path("reports/" + name + ".csv"), io::eval_report_csv(r));
      io::write_file(path("reports/" + name + ".json"), io::eval_report_json(r, name));
    };

    {
      Unit u;
      u.name = "oracle";
      u.key = hash_of({"eval", "oracle", hex64(data_h), hex64(label_h), shared});
      u.outputs = report_outputs("oracle");
      u.run = [this, load, test, vocab, write_report] {
        load();
        write_report("oracle", oracle_report(*test, *vocab, ex().metrics));
      };
      units.push_back(std::move(u));
    }

    for (const EvalSpec& spec : eval_specs()) {
      Unit u;
      u.name = spec.name;
      u.outputs = report_outputs(spec.name);
      const DistillationTarget t = target_for(spec.row);
      std::string models_part;
      std::string weights_part;
      if (spec.row == Ablation::kEnsemble) {
        models_part = ensemble_key_part();
        weights_part = hex64(require("search-weights/ensemble"));
      } else {
        models_part = hex64(output_hash(best_ckpt_unit(t, spec.seed), ckpt(model_name(t, spec.seed), "best")));
        if (spec.row == Ablation::kWeighted)
          weights_part = hex64(require("search-weights/" + model_name(t, spec.seed)));
      }
      u.key = hash_of({"eval", spec.name, hex64(data_h), hex64(label_h), shared, models_part, weights_part});
      u.run = [this, spec, t, load, test, vocab, write_report] {
        load();
        InferenceMode mode = InferenceMode::kAssembledCost;
        std::optional<CostWeights> w;
        switch (spec.row) {
          case Ablation::kImitationOnly: mode = InferenceMode::kArgmaxImitation; break;
          case Ablation::kPostProcess: mode = InferenceMode::kPostProcess; break;
          case Ablation::kPdmOnly:
          case Ablation::kMultiTarget: mode = InferenceMode::kAssembledCost; break;
          case Ablation::kWeighted:
            mode = InferenceMode::kAssembledCostGrid;
            w = io::read_weights(path("weights/" + model_name(t, spec.seed) + ".weights"));
            break;
          case Ablation::kEnsemble:
            mode = InferenceMode::kAssembledCostGrid;
            w = io::read_weights(path("weights/ensemble.weights"));
            break;
        }
        std::vector<StudentModel> models;
        if (spec.row == Ablation::kEnsemble) {
          for (std::uint64_t seed : ensemble_seeds()) models.push_back(load_model(t, seed));
        } else {
          models.push_back(load_model(t, spec.seed));
        }
        const auto refs = spec.row == Ablation::kEnsemble ? ensemble_refs(models)
                                                           : std::vector<ModelRef>{{&models.front(), 1.0}};
        write_report(spec.name, evaluate(refs, *test, *vocab, mode, w, ex()));
      };
      units.push_back(std::move(u));
    }
    return execute("eval", std::move(units));
  }

  std::vector<std::string> report_units() const {
    std::vector<std::string> out = {"eval/oracle"};
    for (const EvalSpec& s : eval_specs()) out.push_back("eval/" + s.name);
    return out;
  }

  StageResult stage_report() {
    Unit u;
    u.name = "table";
    std::string inputs;
    for (const auto& id : report_units()) inputs += hex64(require(id));
    u.key = hash_of({"report", inputs});
    u.outputs = {"report/table.md", "report/table.csv"};
    u.run = [this] {
      const auto rows = p.table();
      io::write_file(path("report/table.md"), Pipeline::table_markdown(rows));
      std::string csv = "method,runs,nc,dac,ep,ttc,comfort,score,score_min,score_max\n";
      char buf[512];
      for (const TableRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.label.c_str(), r.runs,
                      r.mean.nc, r.mean.dac, r.mean.ep, r.mean.ttc, r.mean.comfort, r.pdm_mean, r.pdm_min,
                      r.pdm_max);
        csv += buf;
      }
      io::write_file(path("report/table.csv"), csv);
    };
    return execute("report", {u});
  }
};

Pipeline::Pipeline(PipelineConfig cfg, fs::path run_dir, Logger log)
    : cfg_(std::move(cfg)), dir_(std::move(run_dir)), log_(std::move(log)) {
  cfg_.resolve();
}

StageResult Pipeline::run_stage(const std::string& stage) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create run directory " + dir_.string() + ": " + ec.message());
  Impl impl(*this);
  try {
    if (stage == "vocab") return impl.stage_vocab();
    if (stage == "build-data") return impl.stage_build_data();
    if (stage == "simulate") return impl.stage_simulate();
    if (stage == "fit") return impl.stage_fit();
    if (stage == "search-weights") return impl.stage_search_weights();
    if (stage == "eval") return impl.stage_eval();
    if (stage == "report") return impl.stage_report();
  } catch (const IntegrityError& e) {
    throw IntegrityError("stage '" + stage + "' failed: " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError("stage '" + stage + "' failed: " + e.what());
  } catch (const IoError& e) {
    throw IoError("stage '" + stage + "' failed: " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("stage '" + stage + "' failed: " + e.what());
  } catch (const std::exception& e) {
    throw Error("stage '" + stage + "' failed: " + e.what());
  }
  throw ConfigError("unknown stage '" + stage + "'");
}

std::vector<StageResult> Pipeline::run() {
  std::vector<StageResult> out;
  for (const std::string& s : all_stages())
    if (std::find(cfg_.stages.begin(), cfg_.stages.end(), s) != cfg_.stages.end()) out.push_back(run_stage(s));
  return out;
}

std::vector<TableRow> Pipeline::table() const {
  Impl impl(const_cast<Pipeline&>(*this));
  auto read = [&](const std::string& name) {
    impl.require("eval/" + name);
    return json::parse(io::read_file(dir_ / "reports" / (name + ".json")));
  };
  std::vector<TableRow> rows;
  auto add = [&](const std::string& label, const std::vector<std::string>& names) {
    TableRow r;
    r.label = label;
    r.mean = SubScores{0.0, 0.0, 0.0, 0.0, 0.0};
    r.pdm_min = 1e300;
    r.pdm_max = -1e300;
    for (const auto& n : names) {
      const json j = read(n);
      r.mean.nc += j.at("nc").get<double>();
      r.mean.dac += j.at("dac").get<double>();
      r.mean.ep += j.at("ep").get<double>();
      r.mean.ttc += j.at("ttc").get<double>();
      r.mean.comfort += j.at("comfort").get<double>();
      const double pdm = j.at("pdm").get<double>();
      r.pdm_mean += pdm;
      r.pdm_min = std::min(r.pdm_min, pdm);
      r.pdm_max = std::max(r.pdm_max, pdm);
      ++r.runs;
    }
    const double n = static_cast<double>(r.runs);
    for (std::size_t m = 0; m < kNumMetrics; ++m) r.mean[m] /= n;
    r.pdm_mean /= n;
    rows.push_back(r);
  };
  for (Ablation a : cfg_.ablations) {
    if (a == Ablation::kEnsemble) {
      add("ensemble", {"ensemble"});
      continue;
    }
    std::vector<std::string> names;
    for (std::uint64_t seed : cfg_.experiment.model_seeds)
      names.push_back(std::string(to_string(a)) + "-s" + std::to_string(seed));
    add(to_string(a), names);
  }
  add("oracle", {"oracle"});
  return rows;
}

std::string Pipeline::table_markdown(const std::vector<TableRow>& rows) {
  std::string out = "| Method | NC | DAC | EP | TTC | C | Score |\n|---|---|---|---|---|---|---|\n";
  char buf[512];
  for (const TableRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "| %s | %.1f | %.1f | %.1f | %.1f | %.1f | %.1f [%.1f, %.1f] |\n",
                  r.label.c_str(), r.mean.nc, r.mean.dac, r.mean.ep, r.mean.ttc, r.mean.comfort, r.pdm_mean,
                  r.pdm_min, r.pdm_max);
    out += buf;
  }
  return out;
}

}  // namespace hydra
