#include "orpodistill/rouge.hpp"

#include <algorithm>

#include "orpodistill/error.hpp"

namespace orpod::text {

namespace {

size_t lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || b.empty()) return 0;
  // Rolling-row dynamic program over the shorter sequence.
  const std::vector<int>& s = a.size() <= b.size() ? a : b;
  const std::vector<int>& t = a.size() <= b.size() ? b : a;
  std::vector<size_t> prev(s.size() + 1, 0), cur(s.size() + 1, 0);
  for (size_t i = 1; i <= t.size(); ++i) {
    for (size_t j = 1; j <= s.size(); ++j) {
      if (t[i - 1] == s[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[s.size()];
}

}  // namespace

double rouge_l(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty() || b.empty()) return 0.0;
  const size_t lcs = lcs_length(a.ids, b.ids);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(a.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(b.size());
  return 2.0 * p * r / (p + r);
}

std::vector<size_t> dedup_by_rouge(const std::vector<TokenSeq>& traces,
                                   double threshold) {
  if (!(threshold > 0.0) || threshold > 1.0)
    throw Error(ErrorKind::InvalidConfig,
                "rouge threshold must be in (0, 1]");
  std::vector<size_t> kept;
  for (size_t i = 0; i < traces.size(); ++i) {
    bool keep = true;
    for (size_t j : kept) {
      if (rouge_l(traces[i], traces[j]) > threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

}  // namespace orpod::text
