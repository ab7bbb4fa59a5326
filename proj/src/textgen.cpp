#include "orpodistill/textgen.hpp"

#include "orpodistill/model.hpp"

namespace orpod::pref {

LmTextGenerator::LmTextGenerator(lm::LmParams params, text::Vocab vocab,
                                 int max_gen_len)
    : params_(std::move(params)),
      vocab_(std::move(vocab)),
      max_gen_len_(max_gen_len) {}

std::string LmTextGenerator::do_generate(const std::string& prompt, double tau,
                                         uint64_t stream_seed) {
  const text::TokenSeq prompt_ids = text::tokenize(prompt, vocab_);
  Rng rng(stream_seed);
  const text::TokenSeq out =
      lm::sample(params_, prompt_ids, tau, max_gen_len_, rng);
  return text::detokenize(out, vocab_);
}

}  // namespace orpod::pref
