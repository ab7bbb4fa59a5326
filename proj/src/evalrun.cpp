#include "orpodistill/evalrun.hpp"

#include <omp.h>

#include "orpodistill/boxed_answer.hpp"
#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/parallel.hpp"
#include "orpodistill/rng.hpp"

namespace orpod::harness {

nlohmann::json EvalReport::to_json() const {
  nlohmann::json items_j = nlohmann::json::array();
  for (const ItemRecord& r : items)
    items_j.push_back(
        {{"prompt_id", r.prompt_id},
         {"predicted", r.predicted ? nlohmann::json(*r.predicted)
                                   : nlohmann::json()},
         {"gold", std::string(1, r.gold)},
         {"correct", r.correct}});
  return {{"model_id", model_id},
          {"dataset_id", dataset_id},
          {"accuracy", accuracy},
          {"n_items", n_items},
          {"n_unparseable", n_unparseable},
          {"items", items_j}};
}

EvalReport evaluate(const lm::LmParams& model,
                    const std::vector<task::QaItem>& eval_items,
                    const text::Vocab& vocab, int max_gen_len,
                    const std::string& model_id,
                    const std::string& dataset_id) {
  if (eval_items.empty())
    throw Error(ErrorKind::InvalidConfig, "eval set is empty");
  EvalReport report;
  report.model_id = model_id;
  report.dataset_id = dataset_id;
  report.n_items = static_cast<int>(eval_items.size());
  report.items.resize(eval_items.size());

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(par::max_threads())
  for (int i = 0; i < static_cast<int>(eval_items.size()); ++i) {
    const task::QaItem& item = eval_items[i];
    ItemRecord& rec = report.items[i];
    rec.prompt_id = item.prompt_id;
    rec.gold = item.gold_label;
    try {
      const text::TokenSeq prompt =
          text::tokenize(task::render_prompt(item), vocab);
      const text::TokenSeq out = lm::greedy_decode(model, prompt, max_gen_len);
      rec.predicted = text::parse_boxed_answer(text::detokenize(out, vocab));
      rec.correct = rec.predicted && rec.predicted->size() == 1 &&
                    (*rec.predicted)[0] == item.gold_label;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::ContextOverflow) {
        rec.predicted = std::nullopt;  // counted as unparseable
        rec.correct = false;
      } else {
#pragma omp critical(eval_failure)
        if (!failure) failure = std::current_exception();
      }
    } catch (...) {
#pragma omp critical(eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  int correct = 0;
  for (const ItemRecord& r : report.items) {
    if (r.correct) ++correct;
    if (!r.predicted) ++report.n_unparseable;
  }
  report.accuracy = 100.0 * correct / report.n_items;
  return report;
}

EvalReport evaluate_random_guesser(const std::vector<task::QaItem>& items,
                                   uint64_t seed,
                                   const std::string& dataset_id) {
  if (items.empty())
    throw Error(ErrorKind::InvalidConfig, "eval set is empty");
  EvalReport report;
  report.model_id = "random-guesser";
  report.dataset_id = dataset_id;
  report.n_items = static_cast<int>(items.size());
  Rng rng = derive_stream(seed, "guess");
  int correct = 0;
  for (const task::QaItem& item : items) {
    const char pick = static_cast<char>('A' + rng.uniform_int(4));
    ItemRecord rec;
    rec.prompt_id = item.prompt_id;
    rec.gold = item.gold_label;
    rec.predicted = std::string(1, pick);
    rec.correct = pick == item.gold_label;
    if (rec.correct) ++correct;
    report.items.push_back(rec);
  }
  report.accuracy = 100.0 * correct / report.n_items;
  return report;
}

}  // namespace orpod::harness
