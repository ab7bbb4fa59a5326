#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "orpodistill/checkpoint.hpp"
#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/optimizer.hpp"
#include "orpodistill/orpo.hpp"
#include "orpodistill/parallel.hpp"
#include "orpodistill/vocab.hpp"

using namespace orpod;
using lm::ArchDescriptor;
using lm::LmParams;
using text::TokenSeq;

namespace {

const text::Vocab& vocab() {
  static const text::Vocab v = text::Vocab::default_vocab();
  return v;
}

ArchDescriptor tiny_arch(const std::string& family, int d = 16, int h = 32,
                         int layers = 2, int ctx = 48) {
  ArchDescriptor a;
  a.family = family;
  a.embed_dim = d;
  a.hidden_dim = h;
  a.layers = layers;
  a.context_len = ctx;
  a.vocab_size = vocab().size();
  a.bos_id = vocab().bos;
  a.eos_id = vocab().eos;
  return a;
}

TokenSeq random_tokens(Rng& rng, size_t len) {
  TokenSeq s;
  s.vocab_tag = vocab().tag();
  for (size_t i = 0; i < len; ++i) {
    int id;
    do {
      id = static_cast<int>(rng.uniform_int(vocab().size()));
    } while (vocab().is_special(id));
    s.ids.push_back(id);
  }
  return s;
}

std::vector<double> softmax_of(const std::vector<double>& logits,
                               double tau = 1.0) {
  double mx = logits[0] / tau;
  for (double v : logits) mx = std::max(mx, v / tau);
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] / tau - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

TEST_CASE("zero output projection gives a uniform softmax") {
  for (const char* family : {lm::kFamilyAttn, lm::kFamilyConvGated}) {
    LmParams params = lm::init_params(tiny_arch(family), 3);
    const auto& we = params.entry("wout");
    std::fill(params.theta.begin() + we.offset,
              params.theta.begin() + we.offset + we.extent(), 0.0);
    Rng rng(5);
    const auto logits = lm::forward_logits(params, random_tokens(rng, 9));
    const auto probs = softmax_of(logits);
    for (double p : probs)
      CHECK(p == doctest::Approx(1.0 / vocab().size()).epsilon(1e-12));
  }
}

TEST_CASE("forward_logits is deterministic and normalized") {
  for (const char* family : {lm::kFamilyAttn, lm::kFamilyConvGated}) {
    const LmParams params = lm::init_params(tiny_arch(family), 11);
    Rng rng(6);
    const TokenSeq ctx = random_tokens(rng, 14);
    const auto a = lm::forward_logits(params, ctx);
    const auto b = lm::forward_logits(params, ctx);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * 8) == 0);

    const auto probs = softmax_of(a);
    const double total = std::accumulate(probs.begin(), probs.end(), 0.0);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("context overflow raises") {
  const LmParams params = lm::init_params(tiny_arch(lm::kFamilyAttn), 1);
  Rng rng(2);
  const TokenSeq big = random_tokens(rng, 64);  // ctx is 48
  CHECK_THROWS_AS(lm::forward_logits(params, big), Error);
  CHECK_THROWS_AS(lm::greedy_decode(params, big, 4), Error);
  CHECK_THROWS_AS(
      lm::response_log_probs(params, big, random_tokens(rng, 4)), Error);
  CHECK_THROWS_AS(
      lm::response_log_probs(params, random_tokens(rng, 4), TokenSeq{}),
      Error);
}

TEST_CASE("response_log_probs on a single-symbol vocabulary is zero") {
  ArchDescriptor a;
  a.family = lm::kFamilyAttn;
  a.embed_dim = 8;
  a.hidden_dim = 16;
  a.layers = 1;
  a.context_len = 16;
  a.vocab_size = 1;
  a.bos_id = 0;
  a.eos_id = 0;
  const LmParams params = lm::init_params(a, 4);
  TokenSeq prompt{{0, 0}, 0}, response{{0, 0, 0}, 0};
  const lm::LogProbs lp = lm::response_log_probs(params, prompt, response);
  REQUIRE(lp.per_token.size() == 3);
  for (double v : lp.per_token) CHECK(v == 0.0);
  CHECK(lp.mean_lp == 0.0);
  CHECK(lp.sum_lp == 0.0);
}

TEST_CASE("uniform model scores every token at log(1/V)") {
  LmParams params = lm::init_params(tiny_arch(lm::kFamilyConvGated), 8);
  const auto& we = params.entry("wout");
  std::fill(params.theta.begin() + we.offset,
            params.theta.begin() + we.offset + we.extent(), 0.0);
  Rng rng(9);
  const TokenSeq prompt = random_tokens(rng, 6);
  const TokenSeq response = random_tokens(rng, 3);
  const lm::LogProbs lp = lm::response_log_probs(params, prompt, response);
  CHECK(lp.sum_lp ==
        doctest::Approx(3.0 * std::log(1.0 / vocab().size())).epsilon(1e-12));
}

TEST_CASE("log probs match stepwise chain-rule recomputation") {
  for (const char* family : {lm::kFamilyAttn, lm::kFamilyConvGated}) {
    const LmParams params = lm::init_params(tiny_arch(family), 21);
    Rng rng(10);
    const TokenSeq prompt = random_tokens(rng, 7);
    const TokenSeq response = random_tokens(rng, 5);
    const lm::LogProbs lp = lm::response_log_probs(params, prompt, response);
    REQUIRE(lp.per_token.size() == response.size());

    // step-by-step through forward_logits, no log-space shortcuts
    double product = 1.0;
    TokenSeq ctx = prompt;
    for (size_t i = 0; i < response.size(); ++i) {
      const auto probs = softmax_of(lm::forward_logits(params, ctx));
      product *= probs[response.ids[i]];
      ctx.ids.push_back(response.ids[i]);
    }
    CHECK(std::exp(lp.sum_lp) == doctest::Approx(product).epsilon(1e-9));

    // masking: the sum covers response tokens only
    CHECK(lp.sum_lp ==
          doctest::Approx(std::accumulate(lp.per_token.begin(),
                                          lp.per_token.end(), 0.0))
              .epsilon(1e-12));
    for (double v : lp.per_token) CHECK(v <= 0.0);
  }
}

TEST_CASE("sampling is seed-deterministic and matches greedy at tau->0") {
  for (const char* family : {lm::kFamilyAttn, lm::kFamilyConvGated}) {
    const LmParams params = lm::init_params(tiny_arch(family), 31);
    Rng rng(11);
    const TokenSeq prompt = random_tokens(rng, 6);

    Rng r1(77), r2(77);
    const TokenSeq a = lm::sample(params, prompt, 0.8, 20, r1);
    const TokenSeq b = lm::sample(params, prompt, 0.8, 20, r2);
    CHECK(a.ids == b.ids);

    Rng r3(78);
    const TokenSeq cold = lm::sample(params, prompt, 1e-6, 20, r3);
    const TokenSeq greedy = lm::greedy_decode(params, prompt, 20);
    CHECK(cold.ids == greedy.ids);

    const TokenSeq again = lm::greedy_decode(params, prompt, 20);
    CHECK(greedy.ids == again.ids);
  }
}

TEST_CASE("single-step sampling frequencies match the tempered softmax") {
  LmParams params = lm::init_params(tiny_arch(lm::kFamilyAttn), 41);
  // sharpen the output head so the distribution is peaked, as it is for
  // any trained model; a flat 58-way categorical cannot resolve to 0.02
  // TVD with 10k draws
  const auto& we = params.entry("wout");
  for (size_t i = 0; i < we.extent(); ++i) params.theta[we.offset + i] *= 8.0;
  Rng prompt_rng(12);
  const TokenSeq prompt = random_tokens(prompt_rng, 5);
  const double tau = 0.8;
  const auto probs = softmax_of(lm::forward_logits(params, prompt), tau);

  const int n = 10000;
  std::vector<int> counts(vocab().size(), 0);
  int eos_draws = 0;
  for (int i = 0; i < n; ++i) {
    Rng rng(stream_seed(1234, "draw", i));
    const TokenSeq out = lm::sample(params, prompt, tau, 1, rng);
    if (out.ids.empty())
      ++eos_draws;  // EOS was drawn first
    else
      ++counts[out.ids[0]];
  }
  double tvd = 0.0;
  for (int v = 0; v < vocab().size(); ++v) {
    const double freq = v == params.arch.eos_id
                            ? static_cast<double>(eos_draws) / n
                            : static_cast<double>(counts[v]) / n;
    tvd += std::abs(freq - probs[v]);
  }
  tvd *= 0.5;
  CHECK(tvd < 0.02);
}

TEST_CASE("gradients: trivial cases") {
  const LmParams params = lm::init_params(tiny_arch(lm::kFamilyAttn), 51);

  const auto constant = [](lm::Tape& t) { return t.constant(3.5); };
  const auto g0 = lm::grad(params, constant);
  for (double g : g0) CHECK(g == 0.0);

  // 0.5 * ||theta||^2  ->  gradient equals theta exactly
  const auto quad = [](lm::Tape& t) {
    return t.scale(t.param_sq_norm(), 0.5);
  };
  const auto g1 = lm::grad(params, quad);
  REQUIRE(g1.size() == params.theta.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == params.theta[i]);

  // the quadratic is exact for central differences up to rounding; use a
  // small parameter vector so summation cancellation stays below 1e-9
  ArchDescriptor micro;
  micro.family = lm::kFamilyAttn;
  micro.embed_dim = 4;
  micro.hidden_dim = 8;
  micro.layers = 1;
  micro.context_len = 8;
  micro.vocab_size = 1;
  micro.bos_id = 0;
  micro.eos_id = 0;
  // central differences carry no truncation term on a quadratic, so a
  // larger eps just shrinks the rounding noise
  const LmParams small = lm::init_params(micro, 52);
  const std::vector<size_t> coords{0, 1, 2, 17, small.theta.size() - 1};
  CHECK(lm::finite_diff_check(small, quad, 1e-3, coords) < 1e-9);
  const std::vector<size_t> coords2{0, 5};
  CHECK(lm::finite_diff_check(small, constant, 1e-5, coords2) == 0.0);
}

TEST_CASE("ORPO gradients match central finite differences") {
  for (const char* family : {lm::kFamilyAttn, lm::kFamilyConvGated}) {
    for (uint64_t model_seed : {1, 2, 3, 4, 5}) {
      const LmParams params =
          lm::init_params(tiny_arch(family, 12, 24, 2, 40), model_seed);
      Rng rng(stream_seed(model_seed, "fd"));
      const TokenSeq prompt = random_tokens(rng, 6);
      const TokenSeq chosen = random_tokens(rng, 5);
      const TokenSeq rejected = random_tokens(rng, 4);

      const auto builder = [&](lm::Tape& t) {
        return orpo::build_orpo_total(t, prompt, chosen, rejected, 1.0);
      };
      std::vector<size_t> coords;
      for (int i = 0; i < 50; ++i)
        coords.push_back(rng.uniform_int(params.theta.size()));
      const double err =
          lm::finite_diff_check(params, builder, 1e-5, coords);
      INFO(family << " seed " << model_seed);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("gradients are identical across thread counts") {
  const LmParams params = lm::init_params(tiny_arch(lm::kFamilyAttn), 61);
  Rng rng(14);
  const TokenSeq prompt = random_tokens(rng, 8);
  const TokenSeq chosen = random_tokens(rng, 6);
  const TokenSeq rejected = random_tokens(rng, 6);
  const auto builder = [&](lm::Tape& t) {
    return orpo::build_orpo_total(t, prompt, chosen, rejected, 1.0);
  };
  par::set_max_threads(1);
  const auto g1 = lm::grad(params, builder);
  par::set_max_threads(4);
  const auto g4 = lm::grad(params, builder);
  par::set_max_threads(0);
  CHECK(std::memcmp(g1.data(), g4.data(), g1.size() * 8) == 0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  LmParams params = lm::init_params(tiny_arch(lm::kFamilyAttn), 71);
  const std::vector<double> before = params.theta;
  lm::AdamState state(params.theta.size());
  const std::vector<double> zeros(params.theta.size(), 0.0);
  lm::optimizer_step(params, zeros, state, 0.01);
  CHECK(params.theta == before);
}

TEST_CASE("adam converges on the quadratic bowl") {
  // plain vector bowl; Adam's residual oscillation scales with sqrt(dim),
  // so a few hundred coordinates keep the 1e-3 target meaningful
  Rng rng(81);
  std::vector<double> theta(200);
  for (double& v : theta) v = rng.normal();
  lm::AdamState state(theta.size());
  for (int step = 0; step < 2000; ++step) {
    const std::vector<double> grad = theta;  // d/dtheta 0.5*||theta||^2
    lm::adam_step(theta, grad, state, 0.01);
  }
  double norm = 0.0;
  for (double v : theta) norm += v * v;
  CHECK(std::sqrt(norm) < 1e-3);
}

TEST_CASE("adam trajectories are deterministic") {
  const LmParams init = lm::init_params(tiny_arch(lm::kFamilyAttn), 91);
  auto run = [&]() {
    LmParams p = init;
    lm::AdamState st(p.theta.size());
    Rng rng(17);
    for (int step = 0; step < 20; ++step) {
      std::vector<double> g(p.theta.size());
      for (double& v : g) v = rng.normal();
      lm::optimizer_step(p, g, st, 0.003);
    }
    return p.theta;
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects shape mismatches") {
  LmParams params = lm::init_params(tiny_arch(lm::kFamilyAttn), 95);
  lm::AdamState state(params.theta.size());
  std::vector<double> bad(params.theta.size() - 1, 0.0);
  CHECK_THROWS_AS(lm::optimizer_step(params, bad, state, 0.01), Error);
}

TEST_CASE("greedy decode memorizes an overfit string and stops at EOS") {
  for (const char* family : {lm::kFamilyAttn, lm::kFamilyConvGated}) {
    LmParams params =
        lm::init_params(tiny_arch(family, 24, 48, 2, 48), 101);
    const TokenSeq prompt = text::tokenize("q: 2+2=?\n", vocab());
    TokenSeq target = text::tokenize("4. boxed{A}", vocab());
    target.ids.push_back(vocab().eos);

    lm::AdamState state(params.theta.size());
    for (int step = 0; step < 250; ++step) {
      const auto builder = [&](lm::Tape& t) {
        return orpo::build_sft_total(t, prompt, target);
      };
      const auto g = lm::grad(params, builder);
      lm::optimizer_step(params, g, state, 3e-3);
    }
    const TokenSeq out = lm::greedy_decode(params, prompt, 30);
    INFO(family);
    CHECK(text::detokenize(out, vocab()) == "4. boxed{A}");
    // output contains nothing after the first EOS
    for (int id : out.ids) CHECK(id != vocab().eos);
  }
}

TEST_CASE("checkpoint round trip is exact") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "od_ckpt_test";
  fs::create_directories(dir);
  const fs::path path = dir / "model.ckpt";

  lm::Checkpoint ckpt;
  ckpt.params = lm::init_params(tiny_arch(lm::kFamilyConvGated), 111);
  ckpt.epoch = 3;
  ckpt.rng_state = "streams derived from seed 42";
  ckpt.run_id = "test-run";
  ckpt.config_hash = 0xdeadbeefULL;
  lm::save_checkpoint(ckpt, path);

  const lm::Checkpoint loaded = lm::load_checkpoint(path);
  CHECK(loaded.params.arch == ckpt.params.arch);
  CHECK(std::memcmp(loaded.params.theta.data(), ckpt.params.theta.data(),
                    ckpt.params.theta.size() * 8) == 0);
  CHECK(loaded.epoch == 3);
  CHECK(loaded.rng_state == ckpt.rng_state);
  CHECK(loaded.run_id == "test-run");
  CHECK(loaded.config_hash == 0xdeadbeefULL);

  SUBCASE("corrupted byte is detected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    char byte;
    f.seekg(200);
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x40);
    f.seekp(200);
    f.write(&byte, 1);
    f.close();
    try {
      lm::load_checkpoint(path);
      FAIL("expected CorruptFile");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::CorruptFile);
    }
  }

  SUBCASE("version bump is detected") {
    lm::save_checkpoint(ckpt, path);
    std::ifstream in(path, std::ios::binary);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    in.close();
    const uint32_t other = lm::kCheckpointVersion + 1;
    std::memcpy(buf.data() + 4, &other, sizeof other);
    // keep the checksum consistent so only the version trips
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i + 8 < buf.size(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    std::memcpy(buf.data() + buf.size() - 8, &h, 8);
    std::ofstream out(path, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.close();
    try {
      lm::load_checkpoint(path);
      FAIL("expected VersionMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::VersionMismatch);
    }
  }

  SUBCASE("missing file is an io error") {
    try {
      lm::load_checkpoint(dir / "nope.ckpt");
      FAIL("expected IoError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::IoError);
    }
  }
}
