#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orpodistill/arch.hpp"
#include "orpodistill/taskgen.hpp"
#include "orpodistill/vocab.hpp"

namespace orpod::harness {

struct ItemRecord {
  uint32_t prompt_id = 0;
  std::optional<std::string> predicted;
  char gold = 'A';
  bool correct = false;
};

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  double accuracy = 0.0;  // percent
  int n_items = 0;
  int n_unparseable = 0;
  std::vector<ItemRecord> items;

  nlohmann::json to_json() const;
};

// Greedy-decodes every rendered prompt, parses the boxed answer, compares
// to gold. Unparseable predictions (including decode overflows) count as
// incorrect. Deterministic and order-invariant.
EvalReport evaluate(const lm::LmParams& model,
                    const std::vector<task::QaItem>& eval_items,
                    const text::Vocab& vocab, int max_gen_len,
                    const std::string& model_id,
                    const std::string& dataset_id);

// Calibration path: a fake model that emits "boxed{X}" with X uniform over
// the four labels. Anchors the 25% random-guess floor.
EvalReport evaluate_random_guesser(const std::vector<task::QaItem>& items,
                                   uint64_t seed,
                                   const std::string& dataset_id);

}  // namespace orpod::harness
