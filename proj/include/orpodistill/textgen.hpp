#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "orpodistill/arch.hpp"
#include "orpodistill/vocab.hpp"

namespace orpod::pref {

// The text channel. Everything downstream of a model in the preference
// pipeline (pool construction, the distillation loop) consumes models
// through this string-in/string-out interface only — logits and parameters
// are not reachable from it, which is what makes the teacher black-box and
// cross-architecture transfer possible. The call counter records every use
// of the channel.
class TextGenerator {
 public:
  virtual ~TextGenerator() = default;

  std::string generate(const std::string& prompt, double tau,
                       uint64_t stream_seed) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_generate(prompt, tau, stream_seed);
  }

  uint64_t generate_calls() const {
    return calls_.load(std::memory_order_relaxed);
  }

 protected:
  virtual std::string do_generate(const std::string& prompt, double tau,
                                  uint64_t stream_seed) = 0;

 private:
  std::atomic<uint64_t> calls_{0};
};

// Model-backed generator. Holds a private snapshot of the parameters, so
// callers can keep training their own copy while generation runs.
class LmTextGenerator : public TextGenerator {
 public:
  LmTextGenerator(lm::LmParams params, text::Vocab vocab, int max_gen_len);

 protected:
  std::string do_generate(const std::string& prompt, double tau,
                          uint64_t stream_seed) override;

 private:
  lm::LmParams params_;
  text::Vocab vocab_;
  int max_gen_len_;
};

}  // namespace orpod::pref
