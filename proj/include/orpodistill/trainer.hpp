#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "orpodistill/checkpoint.hpp"
#include "orpodistill/optimizer.hpp"
#include "orpodistill/orpo.hpp"
#include "orpodistill/prefdata.hpp"

namespace orpod::train {

enum class TrainMode {
  zero_shot,
  single_cot_ft,
  diverse_cot_ft,
  orpo_off,
  orpo_on,
  orpo_mixed,
  orpo_teacher_neg,
};

const char* mode_name(TrainMode m);
TrainMode mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::orpo_mixed;
  double phi = 0.5;
  int k = 8;
  double lambda = 1.0;
  double tau = 0.8;
  double eta = 1e-3;
  int epochs = 5;
  int batch_size = 8;
  double rouge_threshold = 0.80;
  uint64_t seed = 0;
  int max_gen_len = 64;  // response cap during pool sampling

  // Enforces the mode/phi invariants (orpo_off -> 0, orpo_on -> 1,
  // orpo_mixed defaults to 0.5) and range checks.
  void validate();

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  uint64_t hash() const;
};

enum class PoolChoice { base, latest };

// Algorithm gate: latest iff u <= phi (inclusive). The trainer draws its
// gate variable from (0,1], so phi=0 never selects the latest pool and
// phi=1 always does.
PoolChoice gate(double u, double phi);

struct IterRecord {
  int epoch = 0;
  int iter = 0;          // 1-based within the epoch
  double u = -1.0;       // gate draw; -1 for SFT-only modes
  PoolChoice pool = PoolChoice::base;
  bool gated = false;    // whether a gate draw happened this iteration
  orpo::OrpoTerms mean_terms;
  int n_records = 0;
  int sft_only = 0;      // records trained without a negative
  double wall_ms = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double eval_accuracy = -1.0;      // percent; -1 when no eval callback
  int refresh_source_epoch = 0;     // checkpoint that generated the epoch's
                                    // latest pool (0 = pre-distill student)
  double diversity_pre = -1.0;      // latest pool, before dedup
  double diversity_post = -1.0;     // latest pool, after dedup
  size_t latest_pool_traces = 0;
  int prompts_without_negatives = 0;
};

struct TrainLog {
  std::vector<IterRecord> iters;
  std::vector<EpochRecord> epochs;

  void write_jsonl(const std::filesystem::path& p) const;
};

// Optional filesystem side of a run: checkpoints per epoch, run.json,
// trainlog.jsonl, and pool exports land under run_dir when set.
struct RunIo {
  std::filesystem::path run_dir;
  std::string run_id;
  bool enabled() const { return !run_dir.empty(); }
};

using EvalFn = std::function<double(const lm::LmParams&)>;

struct DistillResult {
  lm::LmParams final_params;
  TrainLog log;
  std::vector<lm::Checkpoint> checkpoints;  // epochs 0..E
};

// The ORPO-Distill loop. The teacher is reachable only through the text
// generation interface; student negatives come from a φ-gated pair of
// pools (base = pre-distill student, latest = end-of-previous-epoch
// checkpoint, refreshed at epoch boundaries). Mode orpo_teacher_neg swaps
// in teacher-sampled negatives as the fixed pool.
//
// `teacher_pools` may carry pre-built pools for the same (teacher, seed);
// the harness uses it to share one sampling pass across modes. When null,
// the pools are sampled here from the same derived stream, so the result
// is identical either way.
DistillResult distill(const TrainConfig& config, pref::TextGenerator& teacher,
                      const lm::LmParams& student0, const task::Corpus& corpus,
                      const text::Vocab& vocab, const RunIo& io = {},
                      const EvalFn& eval_fn = {},
                      const pref::PoolPair* teacher_pools = nullptr);

// NLL-only baselines on teacher positives: traces_per_prompt = 1 picks the
// first surviving positive per prompt (single-CoT), k uses the full deduped
// pool (diverse-CoT / SeqKD).
DistillResult sft_finetune(const TrainConfig& config,
                           pref::TextGenerator& teacher,
                           const lm::LmParams& student0,
                           const task::Corpus& corpus,
                           const text::Vocab& vocab, int traces_per_prompt,
                           const RunIo& io = {}, const EvalFn& eval_fn = {},
                           const pref::PoolPair* teacher_pools = nullptr);

// Mean over prompts of (1 - mean pairwise ROUGE-L among the prompt's
// traces); singleton lists count as 1.0. Throws Error(EmptyPool) on an
// empty pool.
double negative_diversity(const pref::TracePool& pool);

}  // namespace orpod::train
