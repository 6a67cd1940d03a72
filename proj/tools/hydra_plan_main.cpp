// hydra-plan: command-line front end over the C API.
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hydra/hydra_plan.h"

namespace {

int report_error(hydra_status s) {
  std::fprintf(stderr, "hydra-plan: %s: %s\n", hydra_status_name(s), hydra_last_error());
  return static_cast<int>(s);
}

#define CHECK(call)                          \
  do {                                       \
    const hydra_status st_ = (call);         \
    if (st_ != HYDRA_OK) return report_error(st_); \
  } while (0)

void print_line(const char* line, void*) {
  std::fprintf(stderr, "%s\n", line);
  std::fflush(stderr);
}

struct Common {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Experiment config (INI)")->check(CLI::ExistingFile);
  sub->add_option("--out-dir", c.out_dir, "Run directory; manifest.json lives at its root");
  sub->add_option("--seed", c.seed, "Override the data seed");
  sub->add_flag("-q,--quiet", c.quiet, "Suppress progress lines");
}

int print_table(hydra_pipeline* p) {
  std::uint64_t needed = 0;
  CHECK(hydra_pipeline_table(p, nullptr, 0, &needed));
  std::string buf(needed, '\0');
  CHECK(hydra_pipeline_table(p, buf.data(), needed, &needed));
  std::fputs(buf.c_str(), stdout);
  return 0;
}

// `stage` empty runs the configured stage list.
int run_pipeline(const Common& c, const std::string& stage, bool table) {
  if (c.out_dir.empty()) {
    std::fprintf(stderr, "hydra-plan: --out-dir is required\n");
    return static_cast<int>(HYDRA_E_ARGUMENT);
  }
  hydra_pipeline* p = nullptr;
  CHECK(hydra_pipeline_open(c.config.empty() ? nullptr : c.config.c_str(), c.out_dir.c_str(), c.seed.has_value(),
                            c.seed.value_or(0), c.quiet ? nullptr : print_line, nullptr, &p));
  hydra_status st = stage.empty() ? hydra_pipeline_run(p) : hydra_pipeline_run_stage(p, stage.c_str(), nullptr);
  int rc = st == HYDRA_OK ? 0 : report_error(st);
  if (rc == 0 && table) rc = print_table(p);
  hydra_pipeline_free(p);
  return rc;
}

struct VocabArgs {
  std::uint64_t n = 20000;
  std::uint64_t k = 256;
  std::uint64_t seed = 0;
  std::string out;
};

int direct_vocab(const VocabArgs& a) {
  hydra_vocab* v = nullptr;
  CHECK(hydra_vocab_build(a.n, a.k, a.seed, &v));
  const hydra_status st = hydra_vocab_save(v, a.out.c_str());
  std::uint64_t hash = 0;
  hydra_vocab_info(v, nullptr, nullptr, &hash);
  hydra_vocab_free(v);
  if (st != HYDRA_OK) return report_error(st);
  std::printf("%s %016llx\n", a.out.c_str(), static_cast<unsigned long long>(hash));
  return 0;
}

struct ScenarioArgs {
  std::uint64_t count = 100;
  std::uint64_t seed = 0;
  std::string out;
};

int direct_scenarios(const ScenarioArgs& a) {
  hydra_scenarios* s = nullptr;
  CHECK(hydra_scenarios_generate(a.seed, a.count, &s));
  const hydra_status st = hydra_scenarios_save(s, a.out.c_str());
  hydra_scenarios_free(s);
  return st == HYDRA_OK ? 0 : report_error(st);
}

struct SimulateArgs {
  std::string scenarios;
  std::string vocab;
  std::string out;
};

int direct_simulate(const SimulateArgs& a) {
  hydra_scenarios* s = nullptr;
  hydra_vocab* v = nullptr;
  CHECK(hydra_scenarios_load(a.scenarios.c_str(), &s));
  hydra_status st = hydra_vocab_load(a.vocab.c_str(), &v);
  if (st == HYDRA_OK) st = hydra_simulate(s, v, a.out.c_str(), (a.out + ".json").c_str());
  hydra_vocab_free(v);
  hydra_scenarios_free(s);
  return st == HYDRA_OK ? 0 : report_error(st);
}

struct InferArgs {
  std::vector<std::string> ensemble;
  std::string scenarios;
  std::string vocab;
  std::string weights;
  std::string out;
};

int direct_infer(const InferArgs& a) {
  std::vector<std::string> paths;
  std::vector<double> weights;
  for (const std::string& spec : a.ensemble) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos) {
      paths.push_back(spec);
      weights.push_back(-1.0);
      continue;
    }
    paths.push_back(spec.substr(0, colon));
    try {
      weights.push_back(std::stod(spec.substr(colon + 1)));
    } catch (const std::exception&) {
      std::fprintf(stderr, "hydra-plan: bad ensemble weight in '%s'\n", spec.c_str());
      return static_cast<int>(HYDRA_E_ARGUMENT);
    }
  }
  // Unweighted entries share what is left of the unit mass.
  double given = 0.0;
  int missing = 0;
  for (double w : weights) {
    if (w < 0.0)
      ++missing;
    else
      given += w;
  }
  for (double& w : weights)
    if (w < 0.0) w = (1.0 - given) / missing;

  hydra_infer_options opts;
  hydra_infer_options_default(&opts);
  if (!a.weights.empty()) CHECK(hydra_weights_load(a.weights.c_str(), opts.cost_weights));

  std::vector<hydra_model*> models;
  hydra_scenarios* s = nullptr;
  hydra_vocab* v = nullptr;
  auto cleanup = [&] {
    for (auto* m : models) hydra_model_free(m);
    hydra_scenarios_free(s);
    hydra_vocab_free(v);
  };
  hydra_status st = HYDRA_OK;
  for (const auto& p : paths) {
    hydra_model* m = nullptr;
    st = hydra_model_load(p.c_str(), &m);
    if (st != HYDRA_OK) break;
    models.push_back(m);
  }
  if (st == HYDRA_OK) st = hydra_scenarios_load(a.scenarios.c_str(), &s);
  if (st == HYDRA_OK) st = hydra_vocab_load(a.vocab.c_str(), &v);
  std::vector<hydra_selection> sel;
  if (st == HYDRA_OK) {
    sel.resize(hydra_scenarios_count(s));
    st = hydra_infer(models.data(), weights.data(), models.size(), s, v, &opts, sel.data(), sel.size());
  }
  cleanup();
  if (st != HYDRA_OK) return report_error(st);

  std::FILE* f = a.out.empty() ? stdout : std::fopen(a.out.c_str(), "w");
  if (!f) {
    std::fprintf(stderr, "hydra-plan: cannot write %s\n", a.out.c_str());
    return static_cast<int>(HYDRA_E_IO);
  }
  std::fprintf(f, "scenario,index,nc,dac,ttc,comfort,ep,pdm\n");
  double total = 0.0;
  for (std::size_t i = 0; i < sel.size(); ++i) {
    const auto& r = sel[i];
    std::fprintf(f, "%zu,%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", i, static_cast<unsigned long long>(r.index),
                 r.scores[0], r.scores[1], r.scores[2], r.scores[3], r.scores[4], r.pdm);
    total += r.pdm;
  }
  if (f != stdout) std::fclose(f);
  if (!sel.empty()) std::fprintf(stderr, "mean PDM %.2f over %zu scenarios\n", 100.0 * total / sel.size(), sel.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target hydra-distillation planner: vocabulary, teacher, training and evaluation"};
  app.set_version_flag("--version", hydra_version());
  app.require_subcommand(1);

  Common common;
  VocabArgs va;
  auto* vocab = app.add_subcommand("vocab", "Build a vocabulary (--out) or run the pipeline's vocab stage");
  vocab->add_option("--n", va.n, "Sampled trajectories")->check(CLI::PositiveNumber);
  vocab->add_option("--k", va.k, "Vocabulary size")->check(CLI::PositiveNumber);
  vocab->add_option("--out", va.out, "Vocabulary file (direct mode)");
  add_common(vocab, common);
  vocab->get_option("--seed")->description("Sampling/clustering seed (direct mode) or data seed override");

  ScenarioArgs sa;
  auto* scenarios = app.add_subcommand("scenarios", "Generate scenarios into a .scn.jsonl file");
  scenarios->add_option("--count", sa.count, "Number of scenarios")->check(CLI::PositiveNumber);
  scenarios->add_option("--seed", sa.seed, "First scenario seed");
  scenarios->add_option("--out", sa.out, "Output .scn.jsonl")->required();

  SimulateArgs sma;
  auto* simulate = app.add_subcommand("simulate", "Teacher labels for a scenario file (--scenarios) or the pipeline stage");
  simulate->add_option("--scenarios", sma.scenarios, "Scenario file (direct mode)")->check(CLI::ExistingFile);
  simulate->add_option("--vocab", sma.vocab, "Vocabulary file (direct mode)")->check(CLI::ExistingFile);
  simulate->add_option("--out", sma.out, "Label store; the index is written to <out>.json");
  add_common(simulate, common);

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Select trajectories with one checkpoint or a weighted ensemble");
  infer->add_option("--ensemble", ia.ensemble, "Checkpoints as path[:weight]")->required()->expected(1, -1);
  infer->add_option("--scenarios", ia.scenarios, "Scenario file")->required()->check(CLI::ExistingFile);
  infer->add_option("--vocab", ia.vocab, "Vocabulary file")->required()->check(CLI::ExistingFile);
  infer->add_option("--weights", ia.weights, "Cost-weight file from search-weights")->check(CLI::ExistingFile);
  infer->add_option("--out", ia.out, "CSV output (default stdout)");

  std::vector<std::pair<CLI::App*, std::string>> stages;
  for (const char* name : {"build-data", "fit", "search-weights", "eval"}) {
    auto* sub = app.add_subcommand(name, std::string("Run the pipeline's ") + name + " stage");
    add_common(sub, common);
    stages.emplace_back(sub, name);
  }
  auto* run = app.add_subcommand("run", "Run every configured stage and print the comparison table");
  add_common(run, common);
  auto* report = app.add_subcommand("report", "Build and print the comparison table");
  add_common(report, common);

  CLI11_PARSE(app, argc, argv);

  if (vocab->parsed()) {
    if (!va.out.empty()) {
      va.seed = common.seed.value_or(0);
      return direct_vocab(va);
    }
    return run_pipeline(common, "vocab", false);
  }
  if (scenarios->parsed()) return direct_scenarios(sa);
  if (simulate->parsed()) {
    if (!sma.scenarios.empty()) {
      if (sma.vocab.empty() || sma.out.empty()) {
        std::fprintf(stderr, "hydra-plan: simulate --scenarios needs --vocab and --out\n");
        return static_cast<int>(HYDRA_E_ARGUMENT);
      }
      return direct_simulate(sma);
    }
    return run_pipeline(common, "simulate", false);
  }
  if (infer->parsed()) return direct_infer(ia);
  for (const auto& [sub, name] : stages)
    if (sub->parsed()) return run_pipeline(common, name, false);
  if (run->parsed()) return run_pipeline(common, "", true);
  if (report->parsed()) return run_pipeline(common, "report", true);
  return 0;
}
