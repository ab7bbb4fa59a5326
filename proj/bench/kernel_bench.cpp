// Throughput comparison of the serial reference kernels against their
// OpenMP variants, plus end-to-end model forward/backward and decode rates.
// Usage: orpo-bench [size...]

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "orpodistill/kernels.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/orpo.hpp"
#include "orpodistill/parallel.hpp"
#include "orpodistill/rng.hpp"
#include "orpodistill/vocab.hpp"

using namespace orpod;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void fill_random(std::vector<double>& v, Rng& rng) {
  for (double& x : v) x = rng.normal();
}

void bench_matmul(int n) {
  std::vector<double> a(size_t(n) * n), b(size_t(n) * n), c(size_t(n) * n);
  Rng rng(123);
  fill_random(a, rng);
  fill_random(b, rng);

  const double flops = 2.0 * n * double(n) * n;
  auto time_one = [&](auto&& fn) {
    // warmup + best of 3
    fn();
    double best = 1e100;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = Clock::now();
      fn();
      best = std::min(best, seconds_since(t0));
    }
    return best;
  };

  const double ts = time_one([&] {
    kernels::serial::matmul_nn(a.data(), b.data(), c.data(), n, n, n);
  });
  const double tp = time_one([&] {
    kernels::omp::matmul_nn(a.data(), b.data(), c.data(), n, n, n);
  });
  std::printf("matmul_nn %4dx%-4d  serial %8.2f ms (%6.2f GF/s)   omp %8.2f ms (%6.2f GF/s)   speedup %.2fx\n",
              n, n, ts * 1e3, flops / ts * 1e-9, tp * 1e3,
              flops / tp * 1e-9, ts / tp);
}

void bench_model(const std::string& family) {
  const text::Vocab vocab = text::Vocab::default_vocab();
  lm::ArchDescriptor arch;
  arch.family = family;
  arch.embed_dim = 64;
  arch.hidden_dim = 256;
  arch.layers = 2;
  arch.context_len = 176;
  arch.vocab_size = vocab.size();
  arch.bos_id = vocab.bos;
  arch.eos_id = vocab.eos;
  const lm::LmParams params = lm::init_params(arch, 42);

  Rng rng(7);
  text::TokenSeq prompt{std::vector<int>(80), vocab.tag()};
  for (int& id : prompt.ids) id = static_cast<int>(rng.uniform_int(40));
  text::TokenSeq response{std::vector<int>(48), vocab.tag()};
  for (int& id : response.ids) id = static_cast<int>(rng.uniform_int(40));

  // forward+backward of the ORPO objective on one triple
  const auto t0 = Clock::now();
  int reps = 0;
  while (seconds_since(t0) < 1.0) {
    lm::Tape tape(params);
    int node =
        orpo::build_orpo_total(tape, prompt, response, response, 1.0);
    tape.backward(node);
    ++reps;
  }
  const double fb = seconds_since(t0) / reps;

  // sampled decode throughput
  const auto t1 = Clock::now();
  int tokens = 0, gens = 0;
  while (seconds_since(t1) < 1.0) {
    Rng gen_rng(1000 + gens);
    const text::TokenSeq out = lm::sample(params, prompt, 0.8, 48, gen_rng);
    tokens += static_cast<int>(out.size()) + 1;
    ++gens;
  }
  const double tok_rate = tokens / seconds_since(t1);

  std::printf("%-11s fwd+bwd(triple) %7.2f ms    decode %7.0f tok/s\n",
              family.c_str(), fb * 1e3, tok_rate);
}

}  // namespace

int main(int argc, char** argv) {
  std::printf("threads: %d\n", par::max_threads());
  std::vector<int> sizes = {128, 256, 512};
  if (argc > 1) {
    sizes.clear();
    for (int i = 1; i < argc; ++i) sizes.push_back(std::atoi(argv[i]));
  }
  for (int n : sizes) bench_matmul(n);
  bench_model(lm::kFamilyAttn);
  bench_model(lm::kFamilyConvGated);
  return 0;
}
