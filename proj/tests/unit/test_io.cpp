#include <fstream>

#include "doctest.h"
#include "hydra/common.hpp"
#include "hydra/io.hpp"

using namespace hydra;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void flip_byte(const fs::path& p, std::size_t offset) {
  std::string bytes = io::read_file(p);
  bytes[offset] = static_cast<char>(bytes[offset] ^ 0x01);
  std::ofstream(p, std::ios::binary) << bytes;
}

std::vector<TeacherLabels> some_labels(std::uint64_t vh) {
  std::vector<TeacherLabels> out;
  for (int s = 0; s < 3; ++s) {
    TeacherLabels l;
    l.scenario_id = "scn-" + std::to_string(s);
    l.vocab_hash = vh;
    for (int i = 0; i < 4; ++i) l.scores.push_back({1.0, double(i % 2), 0.0, 1.0, 0.25 * i + 0.01 * s});
    out.push_back(l);
  }
  return out;
}

}  // namespace

TEST_CASE("scenarios round-trip through JSON lines") {
  TempDir dir("hydra-io-scn");
  std::vector<Scenario> s;
  for (std::uint64_t seed = 0; seed < 5; ++seed) s.push_back(generate_scenario(seed, WorldConfig{}));
  io::write_scenarios(dir.path / "x.scn.jsonl", s);
  const auto back = io::read_scenarios(dir.path / "x.scn.jsonl");
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(back[i] == s[i]);
  CHECK_THROWS_AS(io::scenario_from_json("{\"id\": 3}"), IoError);
  CHECK_THROWS_AS(io::read_scenarios(dir.path / "missing.jsonl"), IoError);
}

TEST_CASE("vocabulary files carry a provenance sidecar") {
  TempDir dir("hydra-io-vocab");
  KinematicConfig kin;
  kin.horizon = 6;
  KMeansOptions opt;
  opt.k = 5;
  const auto res = kmeans_cluster(sample_trajectories(60, kin, 1), opt);
  io::VocabProvenance prov;
  prov.samples = 60;
  prov.kinematics = kin;
  prov.iterations = res.iterations;
  prov.sse = res.sse;
  io::write_vocabulary(dir.path / "v.bin", res.vocabulary, prov);
  CHECK(fs::exists(dir.path / "v.bin.json"));
  const Vocabulary back = io::read_vocabulary(dir.path / "v.bin");
  CHECK(back.trajectories == res.vocabulary.trajectories);
  CHECK(io::file_hash(dir.path / "v.bin") == vocabulary_hash(back));
}

TEST_CASE("observation and target stores round-trip") {
  TempDir dir("hydra-io-obs");
  std::vector<Observation> obs;
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    obs.push_back(render_observation(generate_scenario(seed, WorldConfig{}), RasterConfig{}, NoiseConfig{}, seed));
  io::write_observations(dir.path / "o.bin", obs);
  CHECK(io::read_observations(dir.path / "o.bin") == obs);

  std::vector<ImitationTarget> t(2);
  t[0].y = Eigen::Vector3d(0.2, 0.3, 0.5);
  t[1].y = Eigen::Vector3d(1.0, 0.0, 0.0);
  io::write_targets(dir.path / "t.bin", t, 4.5);
  double sigma = 0;
  const auto back = io::read_targets(dir.path / "t.bin", &sigma);
  CHECK(sigma == 4.5);
  REQUIRE(back.size() == 2);
  CHECK(back[0].y == t[0].y);

  const std::string bytes = io::read_file(dir.path / "o.bin");
  io::write_file(dir.path / "short.bin", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(io::read_observations(dir.path / "short.bin"), IoError);
}

TEST_CASE("label stores detect corruption and foreign vocabularies") {
  TempDir dir("hydra-io-labels");
  const auto labels = some_labels(0xabcdef);
  const fs::path bin = dir.path / "l.bin", index = dir.path / "l.json";
  io::write_labels(bin, index, labels);
  const auto back = io::read_labels(bin, index, 0xabcdef);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].scenario_id == labels[i].scenario_id);
    CHECK(back[i].scores == labels[i].scores);
  }
  CHECK_THROWS_AS(io::read_labels(bin, index, 0x123), IntegrityError);
  flip_byte(bin, io::read_file(bin).size() - 3);
  CHECK_THROWS_AS(io::read_labels(bin, index), IntegrityError);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  ModelConfig cfg;
  cfg.grid = 16;
  cfg.horizon = 5;
  cfg.dim = 6;
  cfg.tokens = 2;
  cfg.vocab_size = 3;
  cfg.target = DistillationTarget::kPdmOnly;
  StudentModel m = StudentModel::initialized(cfg, 9);
  m.vocab_hash = 0x5555;
  const StudentModel back = io::decode_checkpoint(io::encode_checkpoint(m));
  CHECK(back.parameters() == m.parameters());
  CHECK(back.vocab_hash == m.vocab_hash);
  CHECK(back.config().target == DistillationTarget::kPdmOnly);
  CHECK(back.config().vocab_size == 3);
  std::string bytes = io::encode_checkpoint(m);
  CHECK_THROWS_AS(io::decode_checkpoint(bytes.substr(0, bytes.size() - 8)), IoError);
  bytes[0] = 'Z';
  CHECK_THROWS_AS(io::decode_checkpoint(bytes), IoError);
}

TEST_CASE("cost weight files") {
  const CostWeights w{0.021544346900318832, 0.1, 1.0, 4.6415888336127775};
  CHECK(io::decode_weights(io::encode_weights(w)) == w);
  CHECK_THROWS_AS(io::decode_weights("w1 = 0.1\nw2 = 1\nw3 = 1\n"), IoError);
  CHECK_THROWS_AS(io::decode_weights("w1 = 0.1\nw2 = 1\nw3 = 1\nw5 = 1\n"), IoError);
  CHECK_THROWS_AS(io::decode_weights("w1 = -1\nw2 = 1\nw3 = 1\nw4 = 1\n"), ConfigError);
}

TEST_CASE("evaluation report formats") {
  EvalReport r = make_report({{"a", 3, {1, 1, 1, 1, 0.5}, pdm_score({1, 1, 1, 1, 0.5})},
                              {"b", 0, {0, 1, 1, 1, 1}, 0.0}});
  const std::string csv = io::eval_report_csv(r);
  CHECK(csv.rfind("scenario_id,index,nc,dac,ttc,comfort,ep,pdm\n", 0) == 0);
  CHECK(csv.find("\nb,0,0,1,1,1,1,0\n") != std::string::npos);
  const std::string json = io::eval_report_json(r, "demo");
  CHECK(json.find("\"label\": \"demo\"") != std::string::npos);
  CHECK(r.mean.nc == doctest::Approx(50.0));
  CHECK(r.pdm == doctest::Approx(100.0 * (9.5 / 12.0) / 2.0));
  const std::vector<EpochStats> curve = {{0, 1.5, 1.0, 0.5, 40.0}};
  CHECK(io::curve_csv(curve) == "epoch,loss,imitation,distillation,val_pdm\n0,1.5,1,0.5,40\n");
}

TEST_CASE("atomic writes create parent directories") {
  TempDir dir("hydra-io-write");
  io::write_file(dir.path / "a" / "b" / "c.txt", "hello");
  CHECK(io::read_file(dir.path / "a" / "b" / "c.txt") == "hello");
  CHECK(io::file_hash(dir.path / "a" / "b" / "c.txt") == fnv1a("hello"));
  CHECK_THROWS_AS(io::read_file(dir.path / "nope"), IoError);
}
