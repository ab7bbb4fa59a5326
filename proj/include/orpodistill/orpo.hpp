#pragma once

#include <vector>

#include "orpodistill/vocab.hpp"

namespace orpod::lm {
class Tape;
struct LmParams;
}  // namespace orpod::lm

namespace orpod::pref {
struct PreferenceTriple;
}

namespace orpod::orpo {

// Numerically stable scalar pieces of the objective. Everything is written
// in log space; the same code backs both the plain evaluation path and the
// tape nodes, so values agree exactly.

double softplus(double z);            // log(1 + e^z), piecewise stable
double sigmoid(double z);
double log1mexp(double m);            // log(1 - e^m) for m < 0

// Mean log-probabilities are clamped to this before entering the odds so a
// memorized sequence (probability 1) cannot produce infinite odds.
inline constexpr double kMeanLpClamp = -1e-12;

// log odds of a sequence with length-normalized log-likelihood mean_lp:
// mean_lp - log(1 - exp(mean_lp)). Throws Error(DegenerateProbability) when
// mean_lp is exactly 0.
double log_odds(double mean_lp);

// -log sigmoid(log_odds_chosen - log_odds_rejected) = softplus(-delta).
double or_loss(double log_odds_chosen, double log_odds_rejected);

// Mean per-token negative log-likelihood of the chosen response.
double sft_loss(double mean_lp_chosen);

struct OrpoTerms {
  double sft_loss = 0.0;
  double or_loss = 0.0;
  double total = 0.0;
  double log_odds_chosen = 0.0;
  double log_odds_rejected = 0.0;
  double lambda = 0.0;
};

// Assembles the loss terms from the two (clamped) mean log-probs.
OrpoTerms terms_from_means(double mean_lp_chosen, double mean_lp_rejected,
                           double lambda);

// Tape builders. Both feed BOS + prompt + response through the model,
// score response tokens only, clamp the means, and return the scalar total
// node, so the objective is differentiable end to end.
int build_orpo_total(lm::Tape& tape, const text::TokenSeq& prompt,
                     const text::TokenSeq& chosen,
                     const text::TokenSeq& rejected, double lambda,
                     OrpoTerms* terms = nullptr);
int build_sft_total(lm::Tape& tape, const text::TokenSeq& prompt,
                    const text::TokenSeq& chosen, OrpoTerms* terms = nullptr);

// Forward-only evaluation of the objective on one preference triple.
OrpoTerms orpo_loss(const pref::PreferenceTriple& triple,
                    const lm::LmParams& params, double lambda);

}  // namespace orpod::orpo
