#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orpodistill/vocab.hpp"

namespace orpod::pref {

enum class Polarity { positive, negative };
enum class TraceSource { teacher, student };

// One sampled reasoning chain, classified against the prompt's gold label.
// Unparseable output counts as negative; teacher traces always carry
// source_epoch 0 (the teacher is never updated).
struct Trace {
  uint32_t prompt_id = 0;
  text::TokenSeq tokens;
  std::string text;
  std::optional<std::string> parsed;
  Polarity polarity = Polarity::negative;
  TraceSource source = TraceSource::teacher;
  int source_epoch = 0;
  int sample_index = 0;

  nlohmann::json to_json() const;
  static Trace from_json(const nlohmann::json& j);
};

struct PreferenceTriple {
  uint32_t prompt_id = 0;
  text::TokenSeq prompt_tokens;
  Trace chosen;    // polarity positive
  Trace rejected;  // polarity negative

  nlohmann::json to_json() const;
};

enum class PoolTag { base_student, latest_student, teacher_pos, teacher_neg };

const char* pool_tag_name(PoolTag t);

// Per-prompt trace lists, deduplicated by ROUGE-L at construction time.
struct TracePool {
  PoolTag tag = PoolTag::teacher_pos;
  std::map<uint32_t, std::vector<Trace>> by_prompt;

  bool empty() const;
  size_t trace_count() const;
  const std::vector<Trace>* find(uint32_t prompt_id) const;
};

}  // namespace orpod::pref
