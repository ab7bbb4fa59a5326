#include "orpodistill/orpo.hpp"

#include <cmath>

#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/trace.hpp"

namespace orpod::orpo {

double softplus(double z) {
  if (z > 30.0) return z;
  if (z < -30.0) return std::exp(z);
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log1mexp(double m) {
  // log(1 - e^m), m < 0; branch at -log 2 for full precision.
  constexpr double kLog2 = 0.6931471805599453;
  if (m < -kLog2) return std::log1p(-std::exp(m));
  return std::log(-std::expm1(m));
}

double log_odds(double mean_lp) {
  if (mean_lp > 0.0)
    throw Error(ErrorKind::InvalidConfig, "mean log-prob must be <= 0");
  if (mean_lp == 0.0)
    throw Error(ErrorKind::DegenerateProbability,
                "probability 1 has infinite odds; clamp mean_lp below 0");
  return mean_lp - log1mexp(mean_lp);
}

double or_loss(double log_odds_chosen, double log_odds_rejected) {
  return softplus(-(log_odds_chosen - log_odds_rejected));
}

double sft_loss(double mean_lp_chosen) { return -mean_lp_chosen; }

OrpoTerms terms_from_means(double mean_lp_chosen, double mean_lp_rejected,
                           double lambda) {
  OrpoTerms t;
  t.lambda = lambda;
  t.log_odds_chosen = log_odds(mean_lp_chosen);
  t.log_odds_rejected = log_odds(mean_lp_rejected);
  t.sft_loss = sft_loss(mean_lp_chosen);
  t.or_loss = or_loss(t.log_odds_chosen, t.log_odds_rejected);
  t.total = t.sft_loss + lambda * t.or_loss;
  return t;
}

int build_orpo_total(lm::Tape& tape, const text::TokenSeq& prompt,
                     const text::TokenSeq& chosen,
                     const text::TokenSeq& rejected, double lambda,
                     OrpoTerms* terms) {
  if (lambda < 0.0)
    throw Error(ErrorKind::InvalidConfig, "lambda must be >= 0");
  int mean_c =
      tape.clamp_max(lm::build_response_mean_lp(tape, prompt, chosen),
                     kMeanLpClamp);
  int mean_r =
      tape.clamp_max(lm::build_response_mean_lp(tape, prompt, rejected),
                     kMeanLpClamp);
  int lo_c = tape.log_odds(mean_c);
  int lo_r = tape.log_odds(mean_r);
  int sft = tape.scale(mean_c, -1.0);
  int orl = tape.softplus_neg(tape.sub(lo_c, lo_r));
  int total = tape.add_scaled(sft, lambda, orl);
  if (terms) {
    terms->lambda = lambda;
    terms->log_odds_chosen = tape.scalar(lo_c);
    terms->log_odds_rejected = tape.scalar(lo_r);
    terms->sft_loss = tape.scalar(sft);
    terms->or_loss = tape.scalar(orl);
    terms->total = tape.scalar(total);
  }
  return total;
}

int build_sft_total(lm::Tape& tape, const text::TokenSeq& prompt,
                    const text::TokenSeq& chosen, OrpoTerms* terms) {
  int mean_c =
      tape.clamp_max(lm::build_response_mean_lp(tape, prompt, chosen),
                     kMeanLpClamp);
  int sft = tape.scale(mean_c, -1.0);
  if (terms) {
    *terms = OrpoTerms{};
    terms->sft_loss = tape.scalar(sft);
    terms->total = terms->sft_loss;
    terms->log_odds_chosen = log_odds(tape.scalar(mean_c));
  }
  return sft;
}

OrpoTerms orpo_loss(const pref::PreferenceTriple& triple,
                    const lm::LmParams& params, double lambda) {
  lm::Tape tape(params);
  OrpoTerms terms;
  build_orpo_total(tape, triple.prompt_tokens, triple.chosen.tokens,
                   triple.rejected.tokens, lambda, &terms);
  return terms;
}

}  // namespace orpod::orpo
