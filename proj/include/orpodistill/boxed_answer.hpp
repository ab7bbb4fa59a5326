#pragma once

#include <optional>
#include <string>

namespace orpod::text {

// Extracts the final answer from a reasoning trace. The grammar is
// `boxed{<label>}` where <label> is a nonempty run of non-brace characters;
// surrounding whitespace is stripped. The LAST well-formed occurrence wins
// (a model may restate its answer; the final statement is the commitment).
// Total: malformed input yields nullopt, never an error.
std::optional<std::string> parse_boxed_answer(const std::string& trace_text);

}  // namespace orpod::text
