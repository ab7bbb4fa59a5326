#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace orpod::task {

enum class TaskKind { ArithChain, PickLargest };

const char* task_kind_name(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// Parameters of a synthetic QA task. Identical specs generate byte-identical
// corpora. Difficulty is tuned through the operand range and chain length.
struct TaskSpec {
  std::string name = "modchain";
  TaskKind kind = TaskKind::ArithChain;
  int operand_min = 2;
  int operand_max = 9;
  int chain_len = 2;  // ArithChain: number of operations
  int train_n = 96;
  int eval_n = 48;
  uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

struct QaItem {
  uint32_t prompt_id = 0;
  std::string question;
  std::array<std::string, 4> options;
  char gold_label = 'A';  // 'A'..'D'
  std::string gold_cot;   // ends in boxed{gold_label}

  nlohmann::json to_json() const;
  static QaItem from_json(const nlohmann::json& j);
};

struct Corpus {
  TaskSpec spec;
  std::vector<QaItem> train;
  std::vector<QaItem> eval_items;
  uint64_t content_hash = 0;  // FNV-1a over the JSONL export
};

// Deterministic corpus generation. Train and eval are disjoint both by
// prompt_id and by question string. Throws Error(SpecInfeasible) when the
// parameter space cannot supply enough distinct questions.
Corpus generate_corpus(const TaskSpec& spec);

// Fixed Reason-then-Answer template: question, lettered options, then an
// instruction to reason step by step and finish with boxed{letter}. No
// answer hint appears anywhere outside the options block.
std::string render_prompt(const QaItem& item);

// JSON Lines export, one QaItem per line.
void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& p);
std::string corpus_jsonl(const Corpus& corpus);

// Built-in task registry used by the CLI ("modchain", "picklarge").
TaskSpec builtin_task(const std::string& name);
std::vector<std::string> builtin_task_names();

}  // namespace orpod::task
