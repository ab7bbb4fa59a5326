#include "orpodistill/prefdata.hpp"

#include <omp.h>

#include <algorithm>
#include <fstream>

#include "orpodistill/boxed_answer.hpp"
#include "orpodistill/error.hpp"
#include "orpodistill/parallel.hpp"
#include "orpodistill/rouge.hpp"

namespace orpod::pref {

// ---------- trace / pool types ----------

const char* pool_tag_name(PoolTag t) {
  switch (t) {
    case PoolTag::base_student: return "base_student";
    case PoolTag::latest_student: return "latest_student";
    case PoolTag::teacher_pos: return "teacher_pos";
    case PoolTag::teacher_neg: return "teacher_neg";
  }
  return "unknown";
}

nlohmann::json Trace::to_json() const {
  return {{"prompt_id", prompt_id},
          {"tokens", tokens.ids},
          {"vocab_tag", tokens.vocab_tag},
          {"text", text},
          {"parsed", parsed ? nlohmann::json(*parsed) : nlohmann::json()},
          {"polarity", polarity == Polarity::positive ? "positive" : "negative"},
          {"source", source == TraceSource::teacher ? "teacher" : "student"},
          {"source_epoch", source_epoch},
          {"sample_index", sample_index}};
}

Trace Trace::from_json(const nlohmann::json& j) {
  Trace t;
  t.prompt_id = j.at("prompt_id").get<uint32_t>();
  t.tokens.ids = j.at("tokens").get<std::vector<int>>();
  t.tokens.vocab_tag = j.at("vocab_tag").get<uint32_t>();
  t.text = j.at("text").get<std::string>();
  if (!j.at("parsed").is_null()) t.parsed = j.at("parsed").get<std::string>();
  t.polarity = j.at("polarity").get<std::string>() == "positive"
                   ? Polarity::positive
                   : Polarity::negative;
  t.source = j.at("source").get<std::string>() == "teacher"
                 ? TraceSource::teacher
                 : TraceSource::student;
  t.source_epoch = j.at("source_epoch").get<int>();
  t.sample_index = j.at("sample_index").get<int>();
  return t;
}

nlohmann::json PreferenceTriple::to_json() const {
  return {{"prompt_id", prompt_id},
          {"prompt_tokens", prompt_tokens.ids},
          {"chosen", chosen.to_json()},
          {"rejected", rejected.to_json()}};
}

bool TracePool::empty() const {
  for (const auto& [id, traces] : by_prompt)
    if (!traces.empty()) return false;
  return true;
}

size_t TracePool::trace_count() const {
  size_t n = 0;
  for (const auto& [id, traces] : by_prompt) n += traces.size();
  return n;
}

const std::vector<Trace>* TracePool::find(uint32_t prompt_id) const {
  auto it = by_prompt.find(prompt_id);
  return it == by_prompt.end() ? nullptr : &it->second;
}

nlohmann::json SampleStats::to_json() const {
  nlohmann::json pos = nlohmann::json::object();
  nlohmann::json neg = nlohmann::json::object();
  for (const auto& [id, n] : positives) pos[std::to_string(id)] = n;
  for (const auto& [id, n] : negatives) neg[std::to_string(id)] = n;
  return {{"positives", pos},
          {"negatives", neg},
          {"dropped_overflow", dropped_overflow},
          {"dedup_discarded", dedup_discarded},
          {"prompts_without_positives", prompts_without_positives},
          {"prompts_without_negatives", prompts_without_negatives}};
}

// ---------- sampling & classification ----------

std::map<uint32_t, std::vector<Trace>> sample_and_classify(
    TextGenerator& model, const std::vector<task::QaItem>& items, int k,
    double tau, uint64_t seed, const text::Vocab& vocab, TraceSource source,
    int source_epoch, SampleStats* stats) {
  if (k < 1) throw Error(ErrorKind::InvalidConfig, "K must be >= 1");
  if (!(tau > 0.0))
    throw Error(ErrorKind::InvalidConfig, "temperature must be > 0");

  const int n_items = static_cast<int>(items.size());
  // one slot per (item, sample); empty text + dropped flag when overflowed
  struct Slot {
    Trace trace;
    bool dropped = false;
  };
  std::vector<Slot> slots(static_cast<size_t>(n_items) * k);
  std::vector<std::string> prompts(n_items);
  for (int i = 0; i < n_items; ++i) prompts[i] = task::render_prompt(items[i]);

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(par::max_threads())
  for (int i = 0; i < n_items; ++i) {
    const task::QaItem& item = items[i];
    for (int s = 0; s < k; ++s) {
      Slot& slot = slots[static_cast<size_t>(i) * k + s];
      try {
        const uint64_t gen_seed =
            stream_seed(seed, "trace", item.prompt_id, s);
        slot.trace.text = model.generate(prompts[i], tau, gen_seed);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::ContextOverflow) {
          slot.dropped = true;
          continue;
        }
#pragma omp critical(sample_failure)
        if (!failure) failure = std::current_exception();
        continue;
      } catch (...) {
#pragma omp critical(sample_failure)
        if (!failure) failure = std::current_exception();
        continue;
      }
      Trace& t = slot.trace;
      t.prompt_id = item.prompt_id;
      t.source = source;
      t.source_epoch = source == TraceSource::teacher ? 0 : source_epoch;
      t.sample_index = s;
      try {
        t.tokens = text::tokenize(t.text, vocab);
      } catch (const Error&) {
        t.tokens = text::TokenSeq{{}, vocab.tag()};
      }
      t.parsed = text::parse_boxed_answer(t.text);
      t.polarity = t.parsed && t.parsed->size() == 1 &&
                           (*t.parsed)[0] == item.gold_label
                       ? Polarity::positive
                       : Polarity::negative;
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::map<uint32_t, std::vector<Trace>> out;
  for (int i = 0; i < n_items; ++i) {
    std::vector<Trace>& list = out[items[i].prompt_id];
    for (int s = 0; s < k; ++s) {
      const Slot& slot = slots[static_cast<size_t>(i) * k + s];
      if (slot.dropped) {
        if (stats) ++stats->dropped_overflow;
        continue;
      }
      list.push_back(slot.trace);
    }
    if (stats) {
      int pos = 0, neg = 0;
      for (const Trace& t : list)
        (t.polarity == Polarity::positive ? pos : neg)++;
      stats->positives[items[i].prompt_id] = pos;
      stats->negatives[items[i].prompt_id] = neg;
    }
  }
  return out;
}

// Filters by polarity, then greedy ROUGE-L rejection in sample order.
TracePool pool_from_raw(const std::map<uint32_t, std::vector<Trace>>& raw,
                        Polarity want, PoolTag tag, double rouge_threshold,
                        SampleStats* stats) {
  TracePool pool;
  pool.tag = tag;
  for (const auto& [prompt_id, traces] : raw) {
    std::vector<Trace> kept_polarity;
    for (const Trace& t : traces)
      if (t.polarity == want) kept_polarity.push_back(t);
    std::vector<text::TokenSeq> seqs;
    seqs.reserve(kept_polarity.size());
    for (const Trace& t : kept_polarity) seqs.push_back(t.tokens);
    const std::vector<size_t> kept = text::dedup_by_rouge(seqs, rouge_threshold);
    if (stats)
      stats->dedup_discarded +=
          static_cast<int>(kept_polarity.size() - kept.size());
    std::vector<Trace>& out = pool.by_prompt[prompt_id];
    for (size_t idx : kept) out.push_back(kept_polarity[idx]);
    if (out.empty()) {
      if (stats) {
        auto& flagged = want == Polarity::positive
                            ? stats->prompts_without_positives
                            : stats->prompts_without_negatives;
        flagged.push_back(prompt_id);
      }
      pool.by_prompt.erase(prompt_id);
    }
  }
  return pool;
}

TracePool build_positive_pool(TextGenerator& teacher,
                              const std::vector<task::QaItem>& items, int k,
                              double tau, double rouge_threshold,
                              uint64_t seed, const text::Vocab& vocab,
                              SampleStats* stats) {
  auto raw = sample_and_classify(teacher, items, k, tau, seed, vocab,
                                 TraceSource::teacher, 0, stats);
  TracePool pool = pool_from_raw(raw, Polarity::positive,
                                    PoolTag::teacher_pos, rouge_threshold,
                                    stats);
  if (pool.empty())
    throw Error(ErrorKind::EmptyPool,
                "teacher produced no positive trace for any prompt");
  return pool;
}

TracePool build_negative_pool(TextGenerator& model, PoolTag tag,
                              const std::vector<task::QaItem>& items, int k,
                              double tau, double rouge_threshold,
                              uint64_t seed, const text::Vocab& vocab,
                              TraceSource source, int source_epoch,
                              SampleStats* stats) {
  auto raw = sample_and_classify(model, items, k, tau, seed, vocab, source,
                                 source_epoch, stats);
  return pool_from_raw(raw, Polarity::negative, tag, rouge_threshold,
                          stats);
}

PoolPair build_teacher_pools(TextGenerator& teacher,
                             const std::vector<task::QaItem>& items, int k,
                             double tau, double rouge_threshold,
                             uint64_t seed, const text::Vocab& vocab) {
  PoolPair pair;
  auto raw = sample_and_classify(teacher, items, k, tau, seed, vocab,
                                 TraceSource::teacher, 0, &pair.stats);
  pair.positives = pool_from_raw(raw, Polarity::positive,
                                    PoolTag::teacher_pos, rouge_threshold,
                                    &pair.stats);
  pair.negatives = pool_from_raw(raw, Polarity::negative,
                                    PoolTag::teacher_neg, rouge_threshold,
                                    &pair.stats);
  if (pair.positives.empty())
    throw Error(ErrorKind::EmptyPool,
                "teacher produced no positive trace for any prompt");
  return pair;
}

TripleSet assemble_triples(const TracePool& positives,
                           const TracePool& negatives,
                           const text::Vocab& vocab,
                           const std::vector<task::QaItem>& items, Rng& rng) {
  std::map<uint32_t, const task::QaItem*> by_id;
  for (const task::QaItem& item : items) by_id[item.prompt_id] = &item;

  TripleSet set;
  for (const auto& [prompt_id, pos_traces] : positives.by_prompt) {
    if (pos_traces.empty()) continue;
    auto item_it = by_id.find(prompt_id);
    if (item_it == by_id.end()) continue;
    const text::TokenSeq prompt_tokens =
        text::tokenize(task::render_prompt(*item_it->second), vocab);
    const std::vector<Trace>* negs = negatives.find(prompt_id);
    for (const Trace& pos : pos_traces) {
      if (negs && !negs->empty()) {
        const size_t pick = rng.uniform_int(negs->size());
        set.triples.push_back(
            PreferenceTriple{prompt_id, prompt_tokens, pos, (*negs)[pick]});
      } else {
        set.sft_only.push_back(ChosenRecord{prompt_id, prompt_tokens, pos});
      }
    }
  }
  return set;
}

void write_pool_jsonl(const TracePool& pool, const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  for (const auto& [prompt_id, traces] : pool.by_prompt)
    for (const Trace& t : traces) f << t.to_json().dump() << "\n";
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
}

void write_triples_jsonl(const TripleSet& set,
                         const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  for (const PreferenceTriple& t : set.triples)
    f << t.to_json().dump() << "\n";
  for (const ChosenRecord& r : set.sft_only) {
    nlohmann::json j = {{"prompt_id", r.prompt_id},
                        {"prompt_tokens", r.prompt_tokens.ids},
                        {"chosen", r.chosen.to_json()},
                        {"rejected", nullptr}};
    f << j.dump() << "\n";
  }
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
}

}  // namespace orpod::pref
