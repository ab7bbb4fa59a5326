#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/optimizer.hpp"
#include "orpodistill/orpo.hpp"
#include "orpodistill/trace.hpp"
#include "orpodistill/vocab.hpp"

using namespace orpod;
using text::TokenSeq;

namespace {

const text::Vocab& vocab() {
  static const text::Vocab v = text::Vocab::default_vocab();
  return v;
}

lm::LmParams tiny_model(uint64_t seed) {
  lm::ArchDescriptor a;
  a.family = lm::kFamilyAttn;
  a.embed_dim = 12;
  a.hidden_dim = 24;
  a.layers = 1;
  a.context_len = 32;
  a.vocab_size = vocab().size();
  a.bos_id = vocab().bos;
  a.eos_id = vocab().eos;
  return lm::init_params(a, seed);
}

TokenSeq toks(const std::string& s) { return text::tokenize(s, vocab()); }

}  // namespace

TEST_CASE("log_odds closed-form cases") {
  CHECK(orpo::log_odds(std::log(0.5)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(orpo::log_odds(std::log(0.8)) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-10));

  // extreme underflow region: log(1 - e^-700) ~ -1e-304, no -inf
  const double lo = orpo::log_odds(-700.0);
  CHECK(std::isfinite(lo));
  CHECK(lo == doctest::Approx(-700.0).epsilon(1e-12));

  // clamped boundary stays finite
  CHECK(std::isfinite(orpo::log_odds(orpo::kMeanLpClamp)));

  CHECK_THROWS_AS(orpo::log_odds(0.0), Error);
  try {
    orpo::log_odds(0.0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateProbability);
  }
  CHECK_THROWS_AS(orpo::log_odds(0.5), Error);
}

TEST_CASE("log_odds is strictly increasing on (-inf, 0)") {
  double prev = orpo::log_odds(-50.0);
  for (double m : {-20.0, -5.0, -1.0, -0.5, -0.1, -0.01, -1e-6}) {
    const double cur = orpo::log_odds(m);
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("or_loss closed-form and asymptotic cases") {
  CHECK(orpo::or_loss(0.0, 0.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // odds 4 vs odds 1: -log(sigmoid(log 4)) = -log(4/5)
  CHECK(orpo::or_loss(std::log(4.0), 0.0) ==
        doctest::Approx(-std::log(0.8)).epsilon(1e-10));
  // extreme deltas neither overflow nor explode
  CHECK(orpo::or_loss(1000.0, 0.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(orpo::or_loss(-1000.0, 0.0) ==
        doctest::Approx(1000.0).epsilon(1e-12));
  CHECK(orpo::or_loss(500.0, -500.0) >= 0.0);
}

TEST_CASE("sigmoid complement identity") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double delta = (rng.uniform() - 0.5) * 60.0;
    const double a = std::exp(-orpo::or_loss(delta, 0.0));
    const double b = std::exp(-orpo::or_loss(-delta, 0.0));
    CHECK(a + b == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("or_loss monotonicity") {
  // strictly decreasing in log-odds of the chosen
  double prev = orpo::or_loss(-3.0, 0.0);
  for (double lc : {-1.0, 0.0, 1.0, 3.0}) {
    const double cur = orpo::or_loss(lc, 0.0);
    CHECK(cur < prev);
    prev = cur;
  }
  // strictly increasing in log-odds of the rejected
  prev = orpo::or_loss(0.0, -3.0);
  for (double lr : {-1.0, 0.0, 1.0, 3.0}) {
    const double cur = orpo::or_loss(0.0, lr);
    CHECK(cur > prev);
    prev = cur;
  }
}

TEST_CASE("sft_loss basics and recomputation oracle") {
  CHECK(orpo::sft_loss(0.0) == 0.0);
  CHECK(orpo::sft_loss(std::log(0.25)) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  const lm::LmParams params = tiny_model(5);
  const TokenSeq prompt = toks("q: 2+3=?\n");
  const TokenSeq response = toks("5. boxed{A}");
  const lm::LogProbs lp = lm::response_log_probs(params, prompt, response);
  double mean = 0.0;
  for (double v : lp.per_token) mean += v;
  mean /= lp.per_token.size();
  CHECK(orpo::sft_loss(lp.mean_lp) == doctest::Approx(-mean).epsilon(1e-12));
}

TEST_CASE("terms_from_means invariants") {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double mlc = -0.01 - 4.0 * rng.uniform();
    const double mln = -0.01 - 4.0 * rng.uniform();
    const double lambda = 2.0 * rng.uniform();
    const orpo::OrpoTerms t = orpo::terms_from_means(mlc, mln, lambda);
    CHECK(t.total ==
          doctest::Approx(t.sft_loss + lambda * t.or_loss).epsilon(1e-12));
    const double delta = t.log_odds_chosen - t.log_odds_rejected;
    CHECK(t.or_loss ==
          doctest::Approx(orpo::softplus(-delta)).epsilon(1e-12));
    CHECK(t.sft_loss >= 0.0);
    CHECK(t.or_loss >= 0.0);
    CHECK(t.total >= 0.0);
  }
}

TEST_CASE("lambda = 0 reduces exactly to the SFT loss") {
  const lm::LmParams params = tiny_model(7);
  const TokenSeq prompt = toks("q: 4+4=?\n");
  const TokenSeq chosen = toks("8. boxed{B}");
  const TokenSeq rejected = toks("9. boxed{C}");

  lm::Tape tape(params);
  orpo::OrpoTerms t;
  orpo::build_orpo_total(tape, prompt, chosen, rejected, 0.0, &t);
  CHECK(t.total == t.sft_loss);  // exact, not approximate

  lm::Tape tape2(params);
  orpo::OrpoTerms sft_only;
  orpo::build_sft_total(tape2, prompt, chosen, &sft_only);
  CHECK(t.sft_loss == sft_only.sft_loss);
}

TEST_CASE("identical chosen and rejected give total = sft + lambda*log 2") {
  const lm::LmParams params = tiny_model(8);
  const TokenSeq prompt = toks("q: 1+2=?\n");
  const TokenSeq same = toks("3. boxed{D}");

  lm::Tape tape(params);
  orpo::OrpoTerms t;
  orpo::build_orpo_total(tape, prompt, same, same, 1.0, &t);
  CHECK(t.or_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(t.total ==
        doctest::Approx(t.sft_loss + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("total is affine in lambda with slope or_loss") {
  const lm::LmParams params = tiny_model(9);
  const TokenSeq prompt = toks("q: 5+1=?\n");
  const TokenSeq chosen = toks("6. boxed{A}");
  const TokenSeq rejected = toks("7. boxed{B}");

  auto eval_at = [&](double lambda) {
    lm::Tape tape(params);
    orpo::OrpoTerms t;
    orpo::build_orpo_total(tape, prompt, chosen, rejected, lambda, &t);
    return t;
  };
  const orpo::OrpoTerms t0 = eval_at(0.0);
  for (double lambda : {0.5, 1.0, 2.0, 3.5}) {
    const orpo::OrpoTerms t = eval_at(lambda);
    CHECK(t.or_loss == t0.or_loss);
    CHECK(t.total ==
          doctest::Approx(t0.total + lambda * t0.or_loss).epsilon(1e-12));
  }
}

TEST_CASE("preference triple overload matches the token-level builder") {
  const lm::LmParams params = tiny_model(10);
  pref::PreferenceTriple triple;
  triple.prompt_id = 1;
  triple.prompt_tokens = toks("q: 3*3=?\n");
  triple.chosen.tokens = toks("9. boxed{C}");
  triple.chosen.polarity = pref::Polarity::positive;
  triple.rejected.tokens = toks("6. boxed{A}");
  triple.rejected.polarity = pref::Polarity::negative;

  const orpo::OrpoTerms via_triple = orpo::orpo_loss(triple, params, 1.0);
  lm::Tape tape(params);
  orpo::OrpoTerms via_tokens;
  orpo::build_orpo_total(tape, triple.prompt_tokens, triple.chosen.tokens,
                         triple.rejected.tokens, 1.0, &via_tokens);
  CHECK(via_triple.total == via_tokens.total);
  CHECK(via_triple.sft_loss == via_tokens.sft_loss);
  CHECK(via_triple.or_loss == via_tokens.or_loss);
}

TEST_CASE("a contrastive step pushes delta upward on a logistic toy") {
  // one-parameter model: delta(theta) = theta, loss = softplus(-theta)
  std::vector<double> theta{0.25};
  lm::AdamState state(1);
  const double before = theta[0];
  for (int step = 0; step < 5; ++step) {
    const std::vector<double> grad{-orpo::sigmoid(-theta[0])};
    lm::adam_step(theta, grad, state, 0.01);
    CHECK(theta[0] >= before);
  }
  CHECK(theta[0] > before);
}
