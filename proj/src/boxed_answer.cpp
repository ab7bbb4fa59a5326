#include "orpodistill/boxed_answer.hpp"

namespace orpod::text {

namespace {
bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}
}  // namespace

std::optional<std::string> parse_boxed_answer(const std::string& text) {
  static const std::string kMarker = "boxed{";
  std::optional<std::string> answer;
  size_t pos = 0;
  while ((pos = text.find(kMarker, pos)) != std::string::npos) {
    size_t open = pos + kMarker.size();
    size_t close = open;
    while (close < text.size() && text[close] != '}' && text[close] != '{')
      ++close;
    pos = open;
    if (close >= text.size() || text[close] != '}') continue;
    size_t lo = open, hi = close;
    while (lo < hi && is_ws(text[lo])) ++lo;
    while (hi > lo && is_ws(text[hi - 1])) --hi;
    if (lo == hi) continue;  // only whitespace inside
    answer = text.substr(lo, hi - lo);
  }
  return answer;
}

}  // namespace orpod::text
