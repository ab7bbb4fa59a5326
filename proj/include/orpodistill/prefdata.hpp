#pragma once

#include <filesystem>
#include <map>

#include "orpodistill/rng.hpp"
#include "orpodistill/taskgen.hpp"
#include "orpodistill/textgen.hpp"
#include "orpodistill/trace.hpp"

namespace orpod::pref {

// Per-run bookkeeping for pool construction: sampled/kept counts and the
// prompts that ended up with no usable trace.
struct SampleStats {
  std::map<uint32_t, int> positives;  // pre-dedup counts per prompt
  std::map<uint32_t, int> negatives;
  int dropped_overflow = 0;
  int dedup_discarded = 0;
  std::vector<uint32_t> prompts_without_positives;
  std::vector<uint32_t> prompts_without_negatives;

  nlohmann::json to_json() const;
};

// Draws K traces per prompt at temperature tau and classifies each against
// the gold label. Prompts are rendered once; the same bytes go to every
// sampler (no answer bias is ever injected). Each (prompt, sample) pair has
// its own RNG stream derived from (seed, prompt_id, sample_index), so
// generation parallelism cannot change the result.
std::map<uint32_t, std::vector<Trace>> sample_and_classify(
    TextGenerator& model, const std::vector<task::QaItem>& items, int k,
    double tau, uint64_t seed, const text::Vocab& vocab, TraceSource source,
    int source_epoch, SampleStats* stats = nullptr);

// Positive traces only, ROUGE-L deduplicated (scores strictly above the
// threshold are discarded; at exactly the threshold a trace is kept).
// Throws Error(EmptyPool) when no prompt has any surviving positive.
TracePool build_positive_pool(TextGenerator& teacher,
                              const std::vector<task::QaItem>& items, int k,
                              double tau, double rouge_threshold,
                              uint64_t seed, const text::Vocab& vocab,
                              SampleStats* stats = nullptr);

// Negative traces (wrong or unparseable answers), deduplicated. Prompts
// with no negatives are only flagged; the trainer falls back to SFT-only
// records for them.
TracePool build_negative_pool(TextGenerator& model, PoolTag tag,
                              const std::vector<task::QaItem>& items, int k,
                              double tau, double rouge_threshold,
                              uint64_t seed, const text::Vocab& vocab,
                              TraceSource source, int source_epoch,
                              SampleStats* stats = nullptr);

// Filters raw classified traces by polarity and deduplicates. A threshold
// of 1.0 keeps everything (ROUGE-L never exceeds 1), which is how the
// pre-dedup diversity diagnostic gets its pool.
TracePool pool_from_raw(const std::map<uint32_t, std::vector<Trace>>& raw,
                        Polarity want, PoolTag tag, double rouge_threshold,
                        SampleStats* stats = nullptr);

// Raw sampled traces split into a (positive, negative) pool pair in one
// pass; used for the teacher, whose samples feed both the chosen pool and
// the teacher-negative ablation pool.
struct PoolPair {
  TracePool positives;
  TracePool negatives;
  SampleStats stats;
};
PoolPair build_teacher_pools(TextGenerator& teacher,
                             const std::vector<task::QaItem>& items, int k,
                             double tau, double rouge_threshold,
                             uint64_t seed, const text::Vocab& vocab);

struct ChosenRecord {
  uint32_t prompt_id = 0;
  text::TokenSeq prompt_tokens;
  Trace chosen;
};

struct TripleSet {
  std::vector<PreferenceTriple> triples;
  std::vector<ChosenRecord> sft_only;  // prompts with no negatives
};

// One triple per surviving positive; the negative is drawn uniformly from
// the prompt's list (with replacement when there are fewer negatives than
// positives). Prompts missing positives are skipped entirely.
TripleSet assemble_triples(const TracePool& positives,
                           const TracePool& negatives, const text::Vocab& vocab,
                           const std::vector<task::QaItem>& items, Rng& rng);

// JSON Lines exports.
void write_pool_jsonl(const TracePool& pool, const std::filesystem::path& p);
void write_triples_jsonl(const TripleSet& set,
                         const std::filesystem::path& p);

}  // namespace orpod::pref
