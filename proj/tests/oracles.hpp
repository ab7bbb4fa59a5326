#pragma once

// Test-only oracles, deliberately independent of the implementation paths
// they check: a full-table LCS dynamic program, and a recursive-descent
// evaluator for the synthetic task questions.

#include <optional>
#include <string>
#include <vector>

namespace oracle {

// Full-table LCS (the library uses a rolling-row variant).
inline size_t lcs_full_table(const std::vector<int>& a,
                             const std::vector<int>& b) {
  std::vector<std::vector<size_t>> dp(a.size() + 1,
                                      std::vector<size_t>(b.size() + 1, 0));
  for (size_t i = 1; i <= a.size(); ++i)
    for (size_t j = 1; j <= b.size(); ++j)
      dp[i][j] = a[i - 1] == b[j - 1]
                     ? dp[i - 1][j - 1] + 1
                     : std::max(dp[i - 1][j], dp[i][j - 1]);
  return dp[a.size()][b.size()];
}

inline double rouge_f1_oracle(const std::vector<int>& a,
                              const std::vector<int>& b) {
  if (a.empty() || b.empty()) return 0.0;
  const double l = static_cast<double>(lcs_full_table(a, b));
  if (l == 0.0) return 0.0;
  const double p = l / a.size(), r = l / b.size();
  return 2.0 * p * r / (p + r);
}

// Parses and evaluates "((3*4)+5)=?" style questions.
struct ExprParser {
  const std::string& s;
  size_t pos = 0;

  explicit ExprParser(const std::string& text) : s(text) {}

  long parse_number() {
    long v = 0;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9')
      v = 10 * v + (s[pos++] - '0');
    return v;
  }

  long parse_expr() {
    if (pos < s.size() && s[pos] == '(') {
      ++pos;  // '('
      long lhs = parse_expr();
      const char op = s[pos++];
      long rhs = parse_expr();
      ++pos;  // ')'
      return op == '*' ? lhs * rhs : op == '+' ? lhs + rhs : lhs - rhs;
    }
    return parse_number();
  }
};

inline std::optional<long> eval_arith_question(const std::string& question) {
  // "((3*4)+5)=?"
  const size_t eq = question.find("=?");
  if (eq == std::string::npos) return std::nullopt;
  ExprParser p(question);
  return p.parse_expr();
}

// "largest of 3+9, 7+2, 5+5, 6+1?" -> the four sums in order.
inline std::optional<std::vector<long>> eval_largest_question(
    const std::string& question) {
  const std::string prefix = "largest of ";
  if (question.rfind(prefix, 0) != 0) return std::nullopt;
  std::vector<long> sums;
  size_t pos = prefix.size();
  while (pos < question.size() && question[pos] != '?') {
    ExprParser p(question);
    p.pos = pos;
    long a = p.parse_number();
    if (question[p.pos] != '+') return std::nullopt;
    ++p.pos;
    long b = p.parse_number();
    sums.push_back(a + b);
    pos = p.pos;
    if (pos + 1 < question.size() && question[pos] == ',') pos += 2;
  }
  return sums;
}

}  // namespace oracle
