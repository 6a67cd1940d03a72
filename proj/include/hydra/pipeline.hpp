#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/train.hpp"

namespace hydra {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "hydra-plan 0.1.0";

// Rows of the comparison table. The teacher oracle is always reported.
enum class Ablation { kImitationOnly, kPostProcess, kPdmOnly, kMultiTarget, kWeighted, kEnsemble };
const char* to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

inline const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> s = {"vocab", "build-data", "simulate", "fit",
                                             "search-weights", "eval", "report"};
  return s;
}

struct PipelineConfig {
  ExperimentConfig experiment;
  std::vector<std::string> stages = all_stages();
  std::vector<Ablation> ablations = {Ablation::kImitationOnly, Ablation::kPostProcess, Ablation::kPdmOnly,
                                     Ablation::kMultiTarget,   Ablation::kWeighted,    Ablation::kEnsemble};
  // Log-spaced weight grid, per weight: [lo, hi] with grid_points points.
  std::array<double, 4> grid_lo = {0.01, 0.1, 0.1, 1.0};
  std::array<double, 4> grid_hi = {0.1, 1.0, 1.0, 10.0};
  int grid_points = 4;

  // Propagates shared settings (horizon, raster size, vocabulary size, grid)
  // into the experiment config and validates the result.
  void resolve();
};

// INI text: [run] [splits] [world] [raster] [noise] [vocab] [metrics] [model]
// [train] [infer]. Unknown sections or keys are configuration errors.
PipelineConfig parse_config(const std::string& ini_text);
PipelineConfig load_config(const fs::path& p);
// Every resolved setting, one "section.key = value" line each, sorted.
std::string canonical_config(const PipelineConfig& cfg);

struct StageResult {
  std::string stage;
  int units_run = 0;
  int units_cached = 0;
  bool skipped() const { return units_run == 0; }
};

// One row of the comparison table, aggregated over model seeds.
struct TableRow {
  std::string label;
  int runs = 0;
  SubScores mean;  // x100
  double pdm_mean = 0.0;
  double pdm_min = 0.0;
  double pdm_max = 0.0;
};

// Stages run in a fixed dependency order under one run directory with
// manifest.json at its root. A stage whose inputs hash to the value recorded in
// the manifest, and whose outputs are intact on disk, is skipped.
class Pipeline {
 public:
  using Logger = std::function<void(std::string_view)>;

  Pipeline(PipelineConfig cfg, fs::path run_dir, Logger log = {});

  const PipelineConfig& config() const { return cfg_; }
  const fs::path& run_dir() const { return dir_; }

  StageResult run_stage(const std::string& stage);
  // The configured stage list, in dependency order.
  std::vector<StageResult> run();

  // Comparison table from the evaluation reports on disk.
  std::vector<TableRow> table() const;
  static std::string table_markdown(const std::vector<TableRow>& rows);

  fs::path manifest_path() const { return dir_ / "manifest.json"; }

 private:
  struct Impl;
  PipelineConfig cfg_;
  fs::path dir_;
  Logger log_;
};

}  // namespace hydra
