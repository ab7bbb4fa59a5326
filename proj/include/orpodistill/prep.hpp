#pragma once

#include <filesystem>

#include "orpodistill/evalrun.hpp"
#include "orpodistill/trainer.hpp"

namespace orpod::harness {

// Supervised fine-tuning of a fresh model on gold chains of thought until
// greedy eval accuracy lands in [band_lo, band_hi]. The teacher is prepared
// on the full train split; students on a small prefix so they learn the
// output format but plateau low, leaving the headroom distillation needs.
struct PrepConfig {
  double band_lo = 60.0;
  double band_hi = 90.0;
  int max_epochs = 40;
  int batch_size = 12;
  double eta = 1e-3;
  uint64_t seed = 7;
  int prep_items = 0;     // 0 = full train split
  int max_gen_len = 64;
  int eval_every = 1;     // epochs between accuracy probes

  nlohmann::json to_json() const;
  static PrepConfig from_json(const nlohmann::json& j);
};

struct PrepResult {
  lm::LmParams params;
  double accuracy = 0.0;  // greedy accuracy on the eval split at stop time
  int epochs_used = 0;
  bool in_band = false;
};

PrepResult prepare_model(const lm::ArchDescriptor& arch,
                         const task::Corpus& corpus, const text::Vocab& vocab,
                         const PrepConfig& config);

// Disk cache keyed by (arch, corpus, prep config); reused across matrix
// cells so each teacher is prepared once per task.
PrepResult prepare_model_cached(const lm::ArchDescriptor& arch,
                                const task::Corpus& corpus,
                                const text::Vocab& vocab,
                                const PrepConfig& config,
                                const std::filesystem::path& cache_dir);

}  // namespace orpod::harness
