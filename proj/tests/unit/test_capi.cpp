// Exercises the shared library through its C interface only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "hydra/hydra_plan.h"

namespace fs = std::filesystem;

namespace {

const char* kIni = R"(
[run]
seed = 5
model_seeds = 1
ablations = multi-target, weighted
[splits]
train = 24
val = 8
test = 6
[vocab]
samples = 400
k = 16
max_iters = 10
[train]
epochs = 1
batch = 12
[infer]
grid_points = 2
)";

fs::path fresh_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("status names, version and error reporting") {
  CHECK(std::string(hydra_version()).find("hydra-plan") == 0);
  CHECK(std::string(hydra_status_name(HYDRA_OK)) == "ok");
  CHECK(std::string(hydra_status_name(HYDRA_E_INTEGRITY)) == "integrity error");
  hydra_vocab* v = nullptr;
  CHECK(hydra_vocab_build(100, 0, 1, &v) == HYDRA_E_ARGUMENT);
  CHECK(v == nullptr);
  CHECK(std::string(hydra_last_error()).size() > 0);
  CHECK(hydra_vocab_build(100, 4, 1, nullptr) == HYDRA_E_ARGUMENT);
  CHECK(hydra_vocab_load("/nonexistent/vocab.bin", &v) == HYDRA_E_IO);
  CHECK(hydra_scenarios_count(nullptr) == 0);
  double out = 0;
  CHECK(hydra_pdm_score(nullptr, &out) == HYDRA_E_ARGUMENT);
  hydra_vocab_free(nullptr);
  hydra_scenarios_free(nullptr);
  hydra_model_free(nullptr);
  hydra_pipeline_free(nullptr);
}

TEST_CASE("pdm score through the C interface") {
  const double perfect[5] = {1, 1, 1, 1, 1};
  const double mixed[5] = {1, 1, 0, 1, 0.5};
  const double collided[5] = {0, 1, 1, 1, 1};
  double s = -1;
  REQUIRE(hydra_pdm_score(perfect, &s) == HYDRA_OK);
  CHECK(s == 1.0);
  REQUIRE(hydra_pdm_score(mixed, &s) == HYDRA_OK);
  CHECK(s == doctest::Approx(4.5 / 12.0));
  REQUIRE(hydra_pdm_score(collided, &s) == HYDRA_OK);
  CHECK(s == 0.0);
}

TEST_CASE("vocabulary, scenarios and teacher labels") {
  const fs::path dir = fresh_dir("hydra-capi-basic");
  hydra_vocab* v = nullptr;
  REQUIRE(hydra_vocab_build(300, 8, 11, &v) == HYDRA_OK);
  uint64_t k = 0, hash = 0;
  uint32_t horizon = 0;
  REQUIRE(hydra_vocab_info(v, &k, &horizon, &hash) == HYDRA_OK);
  CHECK(k == 8);
  CHECK(horizon == 40);
  std::vector<double> entry(3 * horizon);
  CHECK(hydra_vocab_entry(v, 8, entry.data(), entry.size()) == HYDRA_E_ARGUMENT);
  CHECK(hydra_vocab_entry(v, 0, entry.data(), entry.size() - 1) == HYDRA_E_ARGUMENT);
  REQUIRE(hydra_vocab_entry(v, 0, entry.data(), entry.size()) == HYDRA_OK);
  for (double x : entry) CHECK(std::isfinite(x));

  const std::string vpath = (dir / "v.bin").string();
  REQUIRE(hydra_vocab_save(v, vpath.c_str()) == HYDRA_OK);
  CHECK(fs::exists(vpath + ".json"));
  hydra_vocab* v2 = nullptr;
  REQUIRE(hydra_vocab_load(vpath.c_str(), &v2) == HYDRA_OK);
  uint64_t hash2 = 0;
  REQUIRE(hydra_vocab_info(v2, nullptr, nullptr, &hash2) == HYDRA_OK);
  CHECK(hash2 == hash);

  hydra_scenarios* s = nullptr;
  REQUIRE(hydra_scenarios_generate(100, 4, &s) == HYDRA_OK);
  CHECK(hydra_scenarios_count(s) == 4);
  const std::string spath = (dir / "s.scn.jsonl").string();
  REQUIRE(hydra_scenarios_save(s, spath.c_str()) == HYDRA_OK);
  hydra_scenarios* s2 = nullptr;
  REQUIRE(hydra_scenarios_load(spath.c_str(), &s2) == HYDRA_OK);
  CHECK(hydra_scenarios_count(s2) == 4);

  double a[5], b[5];
  REQUIRE(hydra_teacher_scores(s, 2, v, 3, a) == HYDRA_OK);
  REQUIRE(hydra_teacher_scores(s2, 2, v2, 3, b) == HYDRA_OK);
  for (int i = 0; i < 5; ++i) {
    CHECK(a[i] == b[i]);
    CHECK(a[i] >= 0.0);
    CHECK(a[i] <= 1.0);
  }
  CHECK(hydra_teacher_scores(s, 4, v, 0, a) == HYDRA_E_ARGUMENT);

  const std::string lbin = (dir / "l.bin").string(), ljson = (dir / "l.json").string();
  REQUIRE(hydra_simulate(s, v, lbin.c_str(), ljson.c_str()) == HYDRA_OK);
  CHECK(fs::file_size(lbin) > 4 * 8 * 5 * sizeof(double) - 1);

  {
    std::ofstream(dir / "bad.scn.jsonl") << "{not json\n";
  }
  hydra_scenarios* bad = nullptr;
  CHECK(hydra_scenarios_load((dir / "bad.scn.jsonl").string().c_str(), &bad) == HYDRA_E_IO);

  hydra_scenarios_free(s);
  hydra_scenarios_free(s2);
  hydra_vocab_free(v);
  hydra_vocab_free(v2);
  fs::remove_all(dir);
}

namespace {
void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->emplace_back(line); }
}  // namespace

TEST_CASE("pipeline, checkpoints and inference") {
  const fs::path dir = fresh_dir("hydra-capi-pipe");
  const fs::path ini = dir / "small.ini";
  std::ofstream(ini) << kIni;
  const fs::path run = dir / "run";

  hydra_pipeline* p = nullptr;
  CHECK(hydra_pipeline_open("/nonexistent.ini", run.string().c_str(), 0, 0, nullptr, nullptr, &p) == HYDRA_E_IO);
  std::vector<std::string> lines;
  REQUIRE(hydra_pipeline_open(ini.string().c_str(), run.string().c_str(), 0, 0, collect, &lines, &p) == HYDRA_OK);
  CHECK(hydra_pipeline_run_stage(p, "dance", nullptr) == HYDRA_E_CONFIG);
  REQUIRE(hydra_pipeline_run(p) == HYDRA_OK);
  CHECK(!lines.empty());
  uint64_t units = 99;
  REQUIRE(hydra_pipeline_run_stage(p, "fit", &units) == HYDRA_OK);
  CHECK(units == 0);

  uint64_t needed = 0;
  REQUIRE(hydra_pipeline_table(p, nullptr, 0, &needed) == HYDRA_OK);
  REQUIRE(needed > 1);
  char tiny[4];
  CHECK(hydra_pipeline_table(p, tiny, sizeof(tiny), &needed) == HYDRA_E_ARGUMENT);
  std::string table(needed, '\0');
  REQUIRE(hydra_pipeline_table(p, table.data(), needed, &needed) == HYDRA_OK);
  CHECK(table.find("multi-target") != std::string::npos);
  CHECK(table.find("weighted") != std::string::npos);
  hydra_pipeline_free(p);

  hydra_model* m = nullptr;
  REQUIRE(hydra_model_load((run / "checkpoints/multi-target-s1.best.ckpt").string().c_str(), &m) == HYDRA_OK);
  double w[4];
  REQUIRE(hydra_weights_load((run / "weights/multi-target-s1.weights").string().c_str(), w) == HYDRA_OK);
  for (double x : w) CHECK(x > 0.0);

  hydra_vocab* v = nullptr;
  REQUIRE(hydra_vocab_load((run / "vocab/vocabulary.bin").string().c_str(), &v) == HYDRA_OK);
  hydra_scenarios* s = nullptr;
  REQUIRE(hydra_scenarios_generate(900, 3, &s) == HYDRA_OK);
  hydra_infer_options opts;
  hydra_infer_options_default(&opts);
  for (int i = 0; i < 4; ++i) opts.cost_weights[i] = w[i];
  std::vector<hydra_selection> sel(3);
  const hydra_model* models[1] = {m};
  const double mw[1] = {1.0};
  CHECK(hydra_infer(models, mw, 1, s, v, &opts, sel.data(), 2) == HYDRA_E_ARGUMENT);
  const double bad_mw[1] = {0.5};
  CHECK(hydra_infer(models, bad_mw, 1, s, v, &opts, sel.data(), 3) == HYDRA_E_CONFIG);
  REQUIRE(hydra_infer(models, mw, 1, s, v, &opts, sel.data(), 3) == HYDRA_OK);
  for (uint64_t i = 0; i < 3; ++i) {
    CHECK(sel[i].index < 16);
    double teacher[5], pdm = 0;
    REQUIRE(hydra_teacher_scores(s, i, v, sel[i].index, teacher) == HYDRA_OK);
    for (int j = 0; j < 5; ++j) CHECK(sel[i].scores[j] == teacher[j]);
    REQUIRE(hydra_pdm_score(teacher, &pdm) == HYDRA_OK);
    CHECK(sel[i].pdm == pdm);
  }

  // A vocabulary other than the one the model was trained on is rejected.
  hydra_vocab* other = nullptr;
  REQUIRE(hydra_vocab_build(200, 16, 77, &other) == HYDRA_OK);
  CHECK(hydra_infer(models, mw, 1, s, other, &opts, sel.data(), 3) == HYDRA_E_INTEGRITY);

  hydra_vocab_free(other);
  hydra_scenarios_free(s);
  hydra_vocab_free(v);
  hydra_model_free(m);
  fs::remove_all(dir);
}
