#include "hydra/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hydra/common.hpp"
#include "json.hpp"

namespace hydra::io {

using nlohmann::json;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + p.string());
  return ss.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::uint64_t file_hash(const fs::path& p) { return fnv1a(read_file(p)); }

namespace {

// Little binary writer/reader; the host is assumed little-endian.
class Writer {
 public:
  explicit Writer(std::string_view magic) : out_(magic) {}
  template <class T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  void put_doubles(std::span<const double> v) {
    out_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
  }
  void put_bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::string_view magic, const char* what) : b_(bytes), what_(what) {
    if (b_.size() < magic.size() || b_.substr(0, magic.size()) != magic)
      throw IoError(std::string(what_) + ": bad magic");
    pos_ = magic.size();
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_doubles(std::span<double> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), b_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void finish() const {
    if (pos_ != b_.size()) throw IoError(std::string(what_) + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw IoError(std::string(what_) + ": truncated");
  }
  std::string_view b_;
  const char* what_;
  std::size_t pos_ = 0;
};

json pose_json(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"heading", p.heading}}; }
Pose pose_from(const json& j) { return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("heading").get<double>()}; }

json points_json(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const Vec2& v : pts) a.push_back({v.x, v.y});
  return a;
}

std::vector<Vec2> points_from(const json& j) {
  std::vector<Vec2> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return out;
}

json trajectory_json(const Trajectory& t) {
  json poses = json::array();
  for (const Pose& p : t.poses) poses.push_back(pose_json(p));
  return {{"dt", t.dt}, {"poses", poses}};
}

Trajectory trajectory_from(const json& j) {
  Trajectory t;
  t.dt = j.at("dt").get<double>();
  for (const auto& p : j.at("poses")) t.poses.push_back(pose_from(p));
  return t;
}

json kinematics_json(const KinematicConfig& k) {
  return {{"horizon", k.horizon},           {"dt", k.dt},
          {"speed_min", k.speed_min},       {"speed_max", k.speed_max},
          {"accel_max", k.accel_max},       {"yaw_rate_max", k.yaw_rate_max},
          {"accel_segments", k.accel_segments}, {"yaw_segments", k.yaw_segments},
          {"min_turn_radius", k.min_turn_radius}};
}

template <class F>
auto parse_json(std::string_view what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw IoError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

// ---- scenarios ------------------------------------------------------------------

std::string scenario_to_json(const Scenario& s) {
  json agents = json::array();
  for (const Agent& a : s.agents)
    agents.push_back({{"initial_pose", pose_json(a.initial_pose)},
                      {"velocity", a.velocity},
                      {"footprint", {{"half_length", a.footprint.half_length},
                                     {"half_width", a.footprint.half_width}}}});
  json j = {{"id", s.id},
            {"drivable_area", points_json(s.drivable_area.vertices())},
            {"route_centerline", points_json(s.route_centerline)},
            {"agents", agents},
            {"ego_start", {{"pose", pose_json(s.ego_start.pose)}, {"speed", s.ego_start.speed}}},
            {"expert_trajectory", trajectory_json(s.expert_trajectory)}};
  return j.dump();
}

Scenario scenario_from_json(std::string_view line) {
  return parse_json("scenario", [&] {
    const json j = json::parse(line);
    Scenario s;
    s.id = j.at("id").get<std::string>();
    s.drivable_area = Polygon(points_from(j.at("drivable_area")));
    s.route_centerline = points_from(j.at("route_centerline"));
    for (const auto& a : j.at("agents")) {
      Agent ag;
      ag.initial_pose = pose_from(a.at("initial_pose"));
      ag.velocity = a.at("velocity").get<double>();
      ag.footprint = {a.at("footprint").at("half_length").get<double>(),
                      a.at("footprint").at("half_width").get<double>()};
      s.agents.push_back(ag);
    }
    s.ego_start.pose = pose_from(j.at("ego_start").at("pose"));
    s.ego_start.speed = j.at("ego_start").at("speed").get<double>();
    s.expert_trajectory = trajectory_from(j.at("expert_trajectory"));
    return s;
  });
}

void write_scenarios(const fs::path& p, std::span<const Scenario> scenarios) {
  std::string out;
  for (const Scenario& s : scenarios) {
    out += scenario_to_json(s);
    out += '\n';
  }
  write_file(p, out);
}

std::vector<Scenario> read_scenarios(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::vector<Scenario> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(scenario_from_json(line));
  return out;
}

// ---- vocabulary -------------------------------------------------------------------

void write_vocabulary(const fs::path& p, const Vocabulary& v, const VocabProvenance& prov) {
  const std::string bytes = encode_vocabulary(v);
  write_file(p, bytes);
  json side = {{"k", v.size()},
               {"horizon", v.horizon},
               {"dt", v.dt},
               {"heading_weight", v.heading_weight},
               {"hash", hex64(fnv1a(bytes))},
               {"samples", prov.samples},
               {"sample_seed", prov.sample_seed},
               {"kmeans_seed", prov.kmeans_seed},
               {"kinematics", kinematics_json(prov.kinematics)},
               {"iterations", prov.iterations},
               {"sse", prov.sse}};
  fs::path sp = p;
  sp += ".json";
  write_file(sp, side.dump(2) + "\n");
}

Vocabulary read_vocabulary(const fs::path& p) { return decode_vocabulary(read_file(p)); }

// ---- dataset stores ------------------------------------------------------------------

void write_observations(const fs::path& p, std::span<const Observation> obs) {
  Writer w("HYOBS001");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(obs.size()));
  const int g = obs.empty() ? 0 : obs.front().grid;
  const double cell = obs.empty() ? 0.0 : obs.front().cell_size;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g));
  w.put<double>(cell);
  for (const Observation& o : obs) {
    if (o.grid != g || o.cell_size != cell) throw ConfigError("observations differ in raster shape");
    w.put_doubles(o.raster);
    w.put_doubles(o.ego_status);
  }
  write_file(p, w.take());
}

std::vector<Observation> read_observations(const fs::path& p) {
  const std::string bytes = read_file(p);
  Reader r(bytes, "HYOBS001", "observation store");
  const auto n = r.get<std::uint32_t>();
  const auto g = r.get<std::uint32_t>();
  const double cell = r.get<double>();
  std::vector<Observation> out(n);
  for (Observation& o : out) {
    o.grid = static_cast<int>(g);
    o.cell_size = cell;
    o.raster.resize(static_cast<std::size_t>(g) * g * 2);
    r.get_doubles(o.raster);
    r.get_doubles(o.ego_status);
  }
  r.finish();
  return out;
}

void write_targets(const fs::path& p, std::span<const ImitationTarget> t, double sigma) {
  Writer w("HYTGT001");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.size()));
  const auto k = t.empty() ? 0 : t.front().y.size();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(k));
  w.put<double>(sigma);
  for (const ImitationTarget& x : t) {
    if (x.y.size() != k) throw ConfigError("imitation targets differ in length");
    w.put_doubles({x.y.data(), static_cast<std::size_t>(k)});
  }
  write_file(p, w.take());
}

std::vector<ImitationTarget> read_targets(const fs::path& p, double* sigma) {
  const std::string bytes = read_file(p);
  Reader r(bytes, "HYTGT001", "target store");
  const auto n = r.get<std::uint32_t>();
  const auto k = r.get<std::uint32_t>();
  const double s = r.get<double>();
  if (sigma) *sigma = s;
  std::vector<ImitationTarget> out(n);
  for (ImitationTarget& t : out) {
    t.y.resize(k);
    r.get_doubles({t.y.data(), static_cast<std::size_t>(k)});
  }
  r.finish();
  return out;
}

void write_labels(const fs::path& bin, const fs::path& index, std::span<const TeacherLabels> labels) {
  const std::size_t n = labels.size();
  const std::size_t k = labels.empty() ? 0 : labels.front().scores.size();
  const std::uint64_t vh = labels.empty() ? 0 : labels.front().vocab_hash;
  Writer w("HYLBL001");
  w.put<std::uint64_t>(vh);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(k));
  for (const TeacherLabels& l : labels)
    if (l.scores.size() != k || l.vocab_hash != vh)
      throw IntegrityError("label sets disagree on vocabulary size or hash");
  for (std::size_t m = 0; m < kNumMetrics; ++m)
    for (const TeacherLabels& l : labels)
      for (const SubScores& s : l.scores) w.put<double>(s[m]);
  const std::string bytes = w.take();
  write_file(bin, bytes);

  json ids = json::array();
  for (const TeacherLabels& l : labels) ids.push_back(l.scenario_id);
  json cols = json::array();
  for (const char* c : kMetricNames) cols.push_back(c);
  json idx = {{"vocab_hash", hex64(vh)}, {"k", k},           {"columns", cols},
              {"scenario_ids", ids},     {"content_hash", hex64(fnv1a(bytes))}};
  write_file(index, idx.dump(1) + "\n");
}

std::vector<TeacherLabels> read_labels(const fs::path& bin, const fs::path& index,
                                       std::uint64_t expected_vocab_hash) {
  const std::string bytes = read_file(bin);
  const json idx = parse_json("label index", [&] { return json::parse(read_file(index)); });
  const std::uint64_t content = parse_hex64(idx.at("content_hash").get<std::string>());
  if (fnv1a(bytes) != content)
    throw IntegrityError("label store " + bin.string() + " does not match its index (content hash " +
                         hex64(fnv1a(bytes)) + ", index says " + hex64(content) + ")");
  Reader r(bytes, "HYLBL001", "label store");
  const auto vh = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  const auto k = r.get<std::uint32_t>();
  if (expected_vocab_hash != 0 && vh != expected_vocab_hash)
    throw IntegrityError("label store was computed against vocabulary " + hex64(vh) + ", expected " +
                         hex64(expected_vocab_hash));
  const auto& ids = idx.at("scenario_ids");
  if (ids.size() != n) throw IntegrityError("label index lists a different number of scenarios");
  std::vector<TeacherLabels> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].scenario_id = ids[i].get<std::string>();
    out[i].vocab_hash = vh;
    out[i].scores.resize(k);
  }
  for (std::size_t m = 0; m < kNumMetrics; ++m)
    for (auto& l : out)
      for (SubScores& s : l.scores) s[m] = r.get<double>();
  r.finish();
  return out;
}

// ---- checkpoints ------------------------------------------------------------------

std::string encode_checkpoint(const StudentModel& m) {
  const ModelConfig& c = m.config();
  json layout = json::array();
  for (const TensorSlot& t : m.layout()) layout.push_back({t.role, t.rows, t.cols});
  json header = {{"format", 1},
                 {"model",
                  {{"grid", c.grid},
                   {"horizon", c.horizon},
                   {"tokens", c.tokens},
                   {"dim", c.dim},
                   {"vocab_size", c.vocab_size},
                   {"target", to_string(c.target)},
                   {"traj_scale", c.traj_scale}}},
                 {"vocab_hash", hex64(m.vocab_hash)},
                 {"layout", layout}};
  const std::string h = header.dump();
  Writer w("HYCKPT01");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(h.size()));
  w.put_bytes(h);
  w.put<std::uint64_t>(m.parameters().size());
  w.put_doubles(m.parameters());
  return w.take();
}

StudentModel decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "HYCKPT01", "checkpoint");
  const auto hlen = r.get<std::uint32_t>();
  const std::string_view hs = r.get_bytes(hlen);
  const json h = parse_json("checkpoint header", [&] { return json::parse(hs); });
  if (h.at("format").get<int>() != 1) throw IoError("checkpoint: unsupported format version");
  const json& mj = h.at("model");
  ModelConfig c;
  c.grid = mj.at("grid").get<int>();
  c.horizon = mj.at("horizon").get<int>();
  c.tokens = mj.at("tokens").get<int>();
  c.dim = mj.at("dim").get<int>();
  c.vocab_size = mj.at("vocab_size").get<int>();
  c.target = parse_distillation_target(mj.at("target").get<std::string>());
  c.traj_scale = mj.at("traj_scale").get<double>();
  c.validate();
  StudentModel m(c);
  m.vocab_hash = parse_hex64(h.at("vocab_hash").get<std::string>());
  const auto& layout = h.at("layout");
  if (layout.size() != m.layout().size()) throw IntegrityError("checkpoint: tensor layout mismatch");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const TensorSlot& t = m.layout()[i];
    if (layout[i].at(0).get<std::string>() != t.role || layout[i].at(1).get<int>() != t.rows ||
        layout[i].at(2).get<int>() != t.cols)
      throw IntegrityError("checkpoint: tensor '" + t.role + "' has an unexpected shape");
  }
  const auto n = r.get<std::uint64_t>();
  if (n != m.parameters().size()) throw IntegrityError("checkpoint: parameter count mismatch");
  r.get_doubles(m.parameters());
  r.finish();
  return m;
}

void write_checkpoint(const fs::path& p, const StudentModel& m) { write_file(p, encode_checkpoint(m)); }
StudentModel read_checkpoint(const fs::path& p) { return decode_checkpoint(read_file(p)); }

// ---- weights ----------------------------------------------------------------------

std::string encode_weights(const CostWeights& w) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "w1 = %.17g\nw2 = %.17g\nw3 = %.17g\nw4 = %.17g\n", w.w1, w.w2, w.w3, w.w4);
  return buf;
}

CostWeights decode_weights(std::string_view text) {
  CostWeights w;
  bool seen[4] = {false, false, false, false};
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("weights: malformed line '" + line + "'");
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(" \t") + 1);
    key.erase(0, key.find_first_not_of(" \t"));
    double v = 0.0;
    try {
      v = std::stod(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw IoError("weights: bad value in '" + line + "'");
    }
    const int idx = key == "w1" ? 0 : key == "w2" ? 1 : key == "w3" ? 2 : key == "w4" ? 3 : -1;
    if (idx < 0) throw IoError("weights: unknown key '" + key + "'");
    seen[idx] = true;
    (idx == 0 ? w.w1 : idx == 1 ? w.w2 : idx == 2 ? w.w3 : w.w4) = v;
  }
  for (bool s : seen)
    if (!s) throw IoError("weights: missing entry");
  w.validate();
  return w;
}

void write_weights(const fs::path& p, const CostWeights& w) { write_file(p, encode_weights(w)); }
CostWeights read_weights(const fs::path& p) { return decode_weights(read_file(p)); }

// ---- reports ------------------------------------------------------------------------

std::string eval_report_csv(const EvalReport& r) {
  std::string out = "scenario_id,index,nc,dac,ttc,comfort,ep,pdm\n";
  char buf[256];
  for (const ScenarioRecord& x : r.records) {
    std::snprintf(buf, sizeof(buf), ",%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", x.index, x.scores.nc,
                  x.scores.dac, x.scores.ttc, x.scores.comfort, x.scores.ep, x.pdm);
    out += x.scenario_id;
    out += buf;
  }
  return out;
}

std::string eval_report_json(const EvalReport& r, std::string_view label) {
  json j = {{"label", label},
            {"scenarios", r.records.size()},
            {"nc", r.mean.nc},
            {"dac", r.mean.dac},
            {"ep", r.mean.ep},
            {"ttc", r.mean.ttc},
            {"comfort", r.mean.comfort},
            {"pdm", r.pdm}};
  return j.dump(2) + "\n";
}

std::string curve_csv(std::span<const EpochStats> curve) {
  std::string out = "epoch,loss,imitation,distillation,val_pdm\n";
  char buf[256];
  for (const EpochStats& e : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.loss, e.imitation,
                  e.distillation, e.val_pdm);
    out += buf;
  }
  return out;
}

}  // namespace hydra::io
