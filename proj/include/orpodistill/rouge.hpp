#pragma once

#include <vector>

#include "orpodistill/vocab.hpp"

namespace orpod::text {

// ROUGE-L F1 between two token sequences: with L the LCS length,
// P = L/|a|, R = L/|b|, score = 2PR/(P+R). Zero when either sequence is
// empty or the LCS is empty. Symmetric, in [0,1], and 1 iff a == b.
double rouge_l(const TokenSeq& a, const TokenSeq& b);

// Greedy keep-first rejection in input order: index i survives iff its
// ROUGE-L against every previously kept sequence is <= threshold (scores
// strictly above the threshold are discarded). Returns kept indices in
// input order. Requires 0 < threshold <= 1.
std::vector<size_t> dedup_by_rouge(const std::vector<TokenSeq>& traces,
                                   double threshold);

}  // namespace orpod::text
