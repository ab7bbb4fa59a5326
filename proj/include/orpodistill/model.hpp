#pragma once

#include <functional>
#include <span>
#include <vector>

#include "orpodistill/arch.hpp"
#include "orpodistill/rng.hpp"
#include "orpodistill/tape.hpp"
#include "orpodistill/vocab.hpp"

namespace orpod::lm {

// --- tape builders (training path) ---

// Feeds `fed` tokens through the model and returns the logits node (len×V).
// The caller provides the BOS framing.
int build_logits(Tape& tape, const std::vector<int>& fed_tokens);

// Builds BOS + prompt + response[:-1], scores response tokens only, and
// returns the scalar mean-log-prob node.
int build_response_mean_lp(Tape& tape, const text::TokenSeq& prompt,
                           const text::TokenSeq& response,
                           std::vector<double>* per_token = nullptr);

// --- no-grad inference ---

// Incremental decoder state (KV cache for the attention family; window ring
// and running prefix sums for the gated-conv family). Parameters are only
// read, never written; one state per concurrent decode.
class InferenceState {
 public:
  explicit InferenceState(const LmParams& params);
  // Feeds one token, returns logits over the next token.
  const std::vector<double>& step(int token);
  const std::vector<double>& logits() const { return logits_; }
  int pos() const { return pos_; }
  void reset();

 private:
  struct LayerState {
    Mat k_cache, v_cache;       // attn family
    Mat window;                 // conv family: ring of last w normed inputs
    std::vector<double> runsum;  // conv family: running sum for prefix mean
  };
  const LmParams& p_;
  std::vector<LayerState> layers_;
  std::vector<double> logits_;
  std::vector<double> x_, tmp_, tmp2_, norm_, gate_, mixed_;
  int pos_ = 0;
};

// Logits after consuming BOS + context. Deterministic in (params, context).
std::vector<double> forward_logits(const LmParams& params,
                                   const text::TokenSeq& context);

struct LogProbs {
  double sum_lp = 0.0;
  double mean_lp = 0.0;
  std::vector<double> per_token;
};

// Teacher-forced log-likelihood of `response` given `prompt`, masked to
// response tokens only. Throws ContextOverflow / EmptyResponse.
LogProbs response_log_probs(const LmParams& params,
                            const text::TokenSeq& prompt,
                            const text::TokenSeq& response);

// Temperature sampling from softmax(logits/tau) until EOS or max_len.
// Deterministic given the rng state. EOS is not included in the output.
text::TokenSeq sample(const LmParams& params, const text::TokenSeq& prompt,
                      double tau, int max_len, Rng& rng);

// Argmax decoding, ties broken toward the lowest token id.
text::TokenSeq greedy_decode(const LmParams& params,
                             const text::TokenSeq& prompt, int max_len);

// --- gradients ---

// A loss is anything that records a scalar node on a tape.
using LossBuilder = std::function<int(Tape&)>;

double eval_loss(const LmParams& params, const LossBuilder& build);

// dLoss/dtheta. Throws Error(NonFiniteLoss) when the loss or any gradient
// component is not finite.
std::vector<double> grad(const LmParams& params, const LossBuilder& build);

// Max relative error of the analytic gradient against central finite
// differences over the sampled coordinates. Relative error uses the
// denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const LmParams& params, const LossBuilder& build,
                         double eps, std::span<const size_t> coords);

}  // namespace orpod::lm
