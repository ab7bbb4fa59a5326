#include "orpodistill/vocab.hpp"

#include <set>

#include "orpodistill/error.hpp"

namespace orpod::text {

namespace {
constexpr const char* kBosAtom = "<bos>";
constexpr const char* kEosAtom = "<eos>";
constexpr const char* kPadAtom = "<pad>";
}  // namespace

void Vocab::finalize() {
  char_to_id_.fill(-1);
  std::set<std::string> seen;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const std::string& s = symbols[i];
    if (s.empty()) throw Error(ErrorKind::InvalidConfig, "empty vocab symbol");
    if (!seen.insert(s).second)
      throw Error(ErrorKind::InvalidConfig, "duplicate vocab symbol: " + s);
    if (s.size() == 1)
      char_to_id_[static_cast<unsigned char>(s[0])] = static_cast<int>(i);
    if (s == kBosAtom) bos = static_cast<int>(i);
    if (s == kEosAtom) eos = static_cast<int>(i);
    if (s == kPadAtom) pad = static_cast<int>(i);
  }
  if (bos < 0 || eos < 0 || pad < 0)
    throw Error(ErrorKind::InvalidConfig, "vocab is missing BOS/EOS/PAD");

  uint32_t h = 2166136261u;
  for (const auto& s : symbols) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 16777619u;
    }
    h ^= 0xff;
    h *= 16777619u;
  }
  tag_ = h;
}

Vocab Vocab::from_symbols(std::vector<std::string> symbols) {
  Vocab v;
  v.symbols = std::move(symbols);
  v.finalize();
  return v;
}

Vocab Vocab::default_vocab() {
  std::vector<std::string> syms;
  const std::string chars =
      "abcdefghijklmnopqrstuvwxyz"
      "ABCD"
      "0123456789"
      " \n()+*%=?.,:-{}";
  for (char c : chars) syms.push_back(std::string(1, c));
  syms.push_back(kBosAtom);
  syms.push_back(kEosAtom);
  syms.push_back(kPadAtom);
  return from_symbols(std::move(syms));
}

nlohmann::json Vocab::to_json() const {
  return {{"symbols", symbols}, {"bos", bos}, {"eos", eos}, {"pad", pad}};
}

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v = from_symbols(j.at("symbols").get<std::vector<std::string>>());
  if (v.bos != j.at("bos").get<int>() || v.eos != j.at("eos").get<int>() ||
      v.pad != j.at("pad").get<int>())
    throw Error(ErrorKind::CorruptFile, "vocab special ids disagree");
  return v;
}

TokenSeq tokenize(const std::string& text, const Vocab& vocab) {
  TokenSeq out;
  out.vocab_tag = vocab.tag();
  out.ids.reserve(text.size());
  for (size_t i = 0; i < text.size(); ++i) {
    int id = vocab.char_id(text[i]);
    if (id < 0)
      throw Error(ErrorKind::UnknownSymbol,
                  "character at position " + std::to_string(i) +
                      " not in vocabulary");
    out.ids.push_back(id);
  }
  return out;
}

std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::string out;
  out.reserve(seq.ids.size());
  for (int id : seq.ids) {
    if (id < 0 || id >= vocab.size())
      throw Error(ErrorKind::UnknownSymbol,
                  "token id " + std::to_string(id) + " out of range");
    if (vocab.is_special(id)) continue;
    out += vocab.symbols[id];
  }
  return out;
}

}  // namespace orpod::text
