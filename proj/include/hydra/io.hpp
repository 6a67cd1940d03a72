#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hydra/infer.hpp"
#include "hydra/model.hpp"
#include "hydra/train.hpp"

namespace hydra::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p);
// Writes through a temporary file and renames, so readers never see partial files.
void write_file(const fs::path& p, std::string_view bytes);
std::uint64_t file_hash(const fs::path& p);

// ---- scenarios: one JSON object per line (.scn.jsonl) ------------------------

std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(std::string_view line);
void write_scenarios(const fs::path& p, std::span<const Scenario> scenarios);
std::vector<Scenario> read_scenarios(const fs::path& p);

// ---- vocabulary: binary file plus <path>.json provenance sidecar -------------

struct VocabProvenance {
  std::size_t samples = 0;
  std::uint64_t sample_seed = 0;
  std::uint64_t kmeans_seed = 0;
  KinematicConfig kinematics;
  int iterations = 0;
  double sse = 0.0;
};

void write_vocabulary(const fs::path& p, const Vocabulary& v, const VocabProvenance& prov);
Vocabulary read_vocabulary(const fs::path& p);

// ---- per-split dataset stores -------------------------------------------------

void write_observations(const fs::path& p, std::span<const Observation> obs);
std::vector<Observation> read_observations(const fs::path& p);

void write_targets(const fs::path& p, std::span<const ImitationTarget> t, double sigma);
std::vector<ImitationTarget> read_targets(const fs::path& p, double* sigma = nullptr);

// Columnar label store: header, then one n*k block per metric. The JSON index
// next to it lists scenario ids and the hash of the binary.
void write_labels(const fs::path& bin, const fs::path& index, std::span<const TeacherLabels> labels);
// Throws IntegrityError if the binary does not match its index, or if
// `expected_vocab_hash` is non-zero and differs from the stored one.
std::vector<TeacherLabels> read_labels(const fs::path& bin, const fs::path& index,
                                       std::uint64_t expected_vocab_hash = 0);

// ---- checkpoints ---------------------------------------------------------------

// "HYCKPT01", u32 header length, JSON header (architecture, vocabulary hash,
// tensor layout), u64 parameter count, f64 parameters. Round-trips bit-exactly.
std::string encode_checkpoint(const StudentModel& m);
StudentModel decode_checkpoint(std::string_view bytes);
void write_checkpoint(const fs::path& p, const StudentModel& m);
StudentModel read_checkpoint(const fs::path& p);

// ---- cost weights: "w1 = <value>" lines -----------------------------------------

std::string encode_weights(const CostWeights& w);
CostWeights decode_weights(std::string_view text);
void write_weights(const fs::path& p, const CostWeights& w);
CostWeights read_weights(const fs::path& p);

// ---- reports ------------------------------------------------------------------

std::string eval_report_csv(const EvalReport& r);
std::string eval_report_json(const EvalReport& r, std::string_view label);
std::string curve_csv(std::span<const EpochStats> curve);

}  // namespace hydra::io
