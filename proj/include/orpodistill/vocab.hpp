#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace orpod::text {

// Character-level vocabulary shared by every model in the pipeline. The
// printable symbols are single characters; BOS/EOS/PAD are multi-character
// atoms appended at the end so plain text can never tokenize to them.
struct Vocab {
  std::vector<std::string> symbols;
  int bos = -1;
  int eos = -1;
  int pad = -1;

  int size() const { return static_cast<int>(symbols.size()); }
  bool is_special(int id) const { return id == bos || id == eos || id == pad; }

  // id for a single character, -1 if absent.
  int char_id(char c) const {
    return char_to_id_[static_cast<unsigned char>(c)];
  }

  // The character set used by the synthetic task templates.
  static Vocab default_vocab();
  static Vocab from_symbols(std::vector<std::string> symbols);

  // Stable identifier of the symbol table (FNV-1a over the symbols).
  uint32_t tag() const { return tag_; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  std::array<int, 256> char_to_id_{};
  uint32_t tag_ = 0;
  void finalize();
};

struct TokenSeq {
  std::vector<int> ids;
  uint32_t vocab_tag = 0;

  bool empty() const { return ids.empty(); }
  size_t size() const { return ids.size(); }
  bool operator==(const TokenSeq&) const = default;
};

// Maps text to token ids, no BOS/EOS framing. Throws Error(UnknownSymbol)
// naming the first offending position.
TokenSeq tokenize(const std::string& text, const Vocab& vocab);

// Inverse of tokenize on plain text; special ids render as nothing.
std::string detokenize(const TokenSeq& seq, const Vocab& vocab);

}  // namespace orpod::text
