#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "orpodistill/evalrun.hpp"
#include "orpodistill/prep.hpp"
#include "orpodistill/trainer.hpp"

namespace orpod::harness {

// One experiment cell = (task, student, mode, seed).
struct CellResult {
  std::string task;
  std::string student;
  train::TrainMode mode = train::TrainMode::zero_shot;
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double accuracy = 0.0;
  int n_items = 0;
  int n_unparseable = 0;
  double wall_s = 0.0;  // metadata only; never rendered into tables
  std::string run_dir;

  nlohmann::json to_json() const;
  static CellResult from_json(const nlohmann::json& j);
};

struct StudentSpec {
  std::string name;
  lm::ArchDescriptor arch;
  PrepConfig prep;
};

struct MatrixConfig {
  std::vector<task::TaskSpec> tasks;
  lm::ArchDescriptor teacher_arch;
  PrepConfig teacher_prep;
  std::vector<StudentSpec> students;
  std::vector<train::TrainMode> modes;
  std::vector<uint64_t> seeds;
  train::TrainConfig base;  // mode and seed are overridden per cell
  int eval_max_gen_len = 64;

  nlohmann::json to_json() const;
  static MatrixConfig from_json(const nlohmann::json& j);

  // The desk-scale default: 2 synthetic tasks × 2 students × 3 seeds.
  static MatrixConfig default_config();
};

struct ExperimentResult {
  nlohmann::json config_echo;
  std::vector<CellResult> cells;
  std::map<std::string, double> teacher_accuracy;  // task -> percent

  nlohmann::json to_json() const;
  static ExperimentResult from_json(const nlohmann::json& j);
};

// Runs every (task, student, mode, seed) cell. Teacher and student prep are
// cached on disk under out_dir/prep; teacher trace pools are built once per
// (task, seed) and shared by every ORPO mode. Individual cell failures are
// recorded and the matrix continues.
ExperimentResult run_matrix(const MatrixConfig& config,
                            const std::filesystem::path& out_dir);

enum class TableFormat { text, csv, json };

// Aggregated per-(student, mode) rows: per-task mean ± stddev over seeds
// plus the cross-task average, mirrored for the teacher. json is lossless;
// text and csv carry the same numeric cells.
std::string render_table(const ExperimentResult& result, TableFormat format);
void write_table(const ExperimentResult& result, TableFormat format,
                 const std::filesystem::path& p);

// Built-in architecture registry for the CLI: "teacher-attn",
// "student-conv-a", "student-conv-b", "student-attn".
lm::ArchDescriptor builtin_arch(const std::string& name,
                                const text::Vocab& vocab);
std::vector<std::string> builtin_arch_names();

}  // namespace orpod::harness
