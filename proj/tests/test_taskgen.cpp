#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "oracles.hpp"
#include "orpodistill/boxed_answer.hpp"
#include "orpodistill/error.hpp"
#include "orpodistill/taskgen.hpp"
#include "orpodistill/vocab.hpp"

using namespace orpod;
using task::Corpus;
using task::QaItem;
using task::TaskSpec;

namespace {

void check_item_invariants(const QaItem& item) {
  // gold CoT parses back to the gold label
  const auto parsed = text::parse_boxed_answer(item.gold_cot);
  REQUIRE(parsed);
  CHECK(*parsed == std::string(1, item.gold_label));

  // options distinct
  std::set<std::string> uniq(item.options.begin(), item.options.end());
  CHECK(uniq.size() == 4);

  CHECK(item.gold_label >= 'A');
  CHECK(item.gold_label <= 'D');
}

void check_oracle(const TaskSpec& spec, const QaItem& item) {
  const int gold_idx = item.gold_label - 'A';
  if (spec.kind == task::TaskKind::ArithChain) {
    const auto value = oracle::eval_arith_question(item.question);
    REQUIRE(value);
    CHECK(item.options[gold_idx] == std::to_string(*value));
    // the answer value appears in exactly one option
    int hits = 0;
    for (const auto& opt : item.options)
      if (opt == std::to_string(*value)) ++hits;
    CHECK(hits == 1);
  } else {
    const auto sums = oracle::eval_largest_question(item.question);
    REQUIRE(sums);
    REQUIRE(sums->size() == 4);
    long best = -1;
    int best_idx = 0;
    for (int i = 0; i < 4; ++i) {
      CHECK(item.options[i] == std::to_string((*sums)[i]));
      if ((*sums)[i] > best) {
        best = (*sums)[i];
        best_idx = i;
      }
    }
    CHECK(best_idx == gold_idx);
  }
}

}  // namespace

TEST_CASE("identical specs generate byte-identical corpora") {
  const TaskSpec spec = task::builtin_task("modchain");
  const Corpus a = task::generate_corpus(spec);
  const Corpus b = task::generate_corpus(spec);
  CHECK(task::corpus_jsonl(a) == task::corpus_jsonl(b));
  CHECK(a.content_hash == b.content_hash);
}

TEST_CASE("infeasible specs are rejected") {
  TaskSpec spec = task::builtin_task("modchain");
  spec.eval_n = 0;
  CHECK_THROWS_AS(task::generate_corpus(spec), Error);

  spec = task::builtin_task("modchain");
  spec.operand_min = 2;
  spec.operand_max = 2;  // tiny question space
  spec.chain_len = 1;
  spec.train_n = 50;
  spec.eval_n = 50;
  try {
    task::generate_corpus(spec);
    FAIL("expected SpecInfeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SpecInfeasible);
  }
}

TEST_CASE("corpus invariants and independent evaluator agreement") {
  for (const char* name : {"modchain", "picklarge"}) {
    const TaskSpec spec = task::builtin_task(name);
    const Corpus corpus = task::generate_corpus(spec);
    CHECK(static_cast<int>(corpus.train.size()) == spec.train_n);
    CHECK(static_cast<int>(corpus.eval_items.size()) == spec.eval_n);

    std::set<std::string> questions;
    std::set<uint32_t> ids;
    for (const auto* split : {&corpus.train, &corpus.eval_items}) {
      for (const QaItem& item : *split) {
        check_item_invariants(item);
        check_oracle(spec, item);
        CHECK(questions.insert(item.question).second);  // no leakage
        CHECK(ids.insert(item.prompt_id).second);
      }
    }
  }
}

TEST_CASE("render_prompt template properties") {
  const Corpus corpus = task::generate_corpus(task::builtin_task("modchain"));
  const text::Vocab vocab = text::Vocab::default_vocab();
  std::set<std::string> rendered;
  for (const QaItem& item : corpus.train) {
    const std::string prompt = task::render_prompt(item);
    // every option label appears exactly once (as "A)" etc.)
    for (char label = 'A'; label <= 'D'; ++label) {
      const std::string marker = std::string(1, label) + ")";
      size_t count = 0, pos = 0;
      while ((pos = prompt.find(marker, pos)) != std::string::npos) {
        ++count;
        ++pos;
      }
      CHECK(count == 1);
    }
    // the gold label never appears outside the options line
    const size_t opt_start = prompt.find("\nA)");
    REQUIRE(opt_start != std::string::npos);
    const size_t opt_end = prompt.find('\n', opt_start + 1);
    const std::string outside =
        prompt.substr(0, opt_start) + prompt.substr(opt_end);
    for (char label = 'A'; label <= 'D'; ++label)
      CHECK(outside.find(label) == std::string::npos);

    // renders are injective over the corpus
    CHECK(rendered.insert(prompt).second);

    // prompts tokenize under the default vocabulary
    CHECK_NOTHROW(text::tokenize(prompt, vocab));
    CHECK_NOTHROW(text::tokenize(item.gold_cot, vocab));
  }
}

TEST_CASE("jsonl export round trips") {
  const Corpus corpus = task::generate_corpus(task::builtin_task("picklarge"));
  const std::string jsonl = task::corpus_jsonl(corpus);
  size_t lines = 0, pos = 0;
  while ((pos = jsonl.find('\n', pos)) != std::string::npos) {
    ++lines;
    ++pos;
  }
  CHECK(lines == corpus.train.size() + corpus.eval_items.size());

  // first line parses back to the first item
  const QaItem item =
      QaItem::from_json(nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n'))));
  CHECK(item.prompt_id == corpus.train.front().prompt_id);
  CHECK(item.question == corpus.train.front().question);
  CHECK(item.gold_cot == corpus.train.front().gold_cot);
}
