#include "orpodistill/taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "orpodistill/error.hpp"
#include "orpodistill/rng.hpp"

namespace orpod::task {

const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::ArithChain: return "arith-chain";
    case TaskKind::PickLargest: return "pick-largest";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "arith-chain") return TaskKind::ArithChain;
  if (s == "pick-largest") return TaskKind::PickLargest;
  throw Error(ErrorKind::InvalidConfig, "unknown task kind: " + s);
}

nlohmann::json TaskSpec::to_json() const {
  return {{"name", name},
          {"kind", task_kind_name(kind)},
          {"operand_min", operand_min},
          {"operand_max", operand_max},
          {"chain_len", chain_len},
          {"train_n", train_n},
          {"eval_n", eval_n},
          {"seed", seed}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec s;
  s.name = j.at("name").get<std::string>();
  s.kind = task_kind_from_string(j.at("kind").get<std::string>());
  s.operand_min = j.at("operand_min").get<int>();
  s.operand_max = j.at("operand_max").get<int>();
  s.chain_len = j.at("chain_len").get<int>();
  s.train_n = j.at("train_n").get<int>();
  s.eval_n = j.at("eval_n").get<int>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

nlohmann::json QaItem::to_json() const {
  return {{"prompt_id", prompt_id},
          {"question", question},
          {"options", options},
          {"gold_label", std::string(1, gold_label)},
          {"gold_cot", gold_cot}};
}

QaItem QaItem::from_json(const nlohmann::json& j) {
  QaItem q;
  q.prompt_id = j.at("prompt_id").get<uint32_t>();
  q.question = j.at("question").get<std::string>();
  auto opts = j.at("options").get<std::vector<std::string>>();
  if (opts.size() != 4)
    throw Error(ErrorKind::CorruptFile, "QaItem must have 4 options");
  std::copy(opts.begin(), opts.end(), q.options.begin());
  q.gold_label = j.at("gold_label").get<std::string>().at(0);
  q.gold_cot = j.at("gold_cot").get<std::string>();
  return q;
}

namespace {

struct Draft {
  std::string question;
  std::array<std::string, 4> options;
  int answer_index = 0;  // index of the correct option
  std::string cot_steps;  // reasoning steps, before "so L. boxed{L}"
};

int rand_operand(Rng& rng, const TaskSpec& s) {
  return s.operand_min +
         static_cast<int>(rng.uniform_int(
             static_cast<uint64_t>(s.operand_max - s.operand_min + 1)));
}

// ((a op b) + c) + d ... : the first operation is drawn from {+, *}, later
// ones are additions so intermediate values stay in a learnable range.
Draft make_arith_chain(Rng& rng, const TaskSpec& s) {
  Draft d;
  int acc = rand_operand(rng, s);
  std::string expr = std::to_string(acc);
  std::ostringstream steps;
  for (int i = 0; i < s.chain_len; ++i) {
    const int v = rand_operand(rng, s);
    const char op = (i == 0 && rng.uniform_int(2) == 0) ? '*' : '+';
    const int next = op == '*' ? acc * v : acc + v;
    steps << acc << op << v << "=" << next << ". ";
    expr = "(" + expr + op + std::to_string(v) + ")";
    acc = next;
  }
  d.question = expr + "=?";
  d.cot_steps = steps.str();

  std::set<int> vals{acc};
  while (vals.size() < 4) {
    int delta = 1 + static_cast<int>(rng.uniform_int(5));
    if (rng.uniform_int(2) == 0) delta = -delta;
    int v = acc + delta;
    if (v >= 0) vals.insert(v);
  }
  std::vector<int> opts(vals.begin(), vals.end());
  // deterministic shuffle of the four option slots
  for (size_t i = opts.size(); i > 1; --i)
    std::swap(opts[i - 1], opts[rng.uniform_int(i)]);
  for (int i = 0; i < 4; ++i) {
    d.options[i] = std::to_string(opts[i]);
    if (opts[i] == acc) d.answer_index = i;
  }
  return d;
}

Draft make_pick_largest(Rng& rng, const TaskSpec& s) {
  Draft d;
  std::array<std::pair<int, int>, 4> pairs;
  std::set<int> sums;
  for (auto& pr : pairs) {
    for (;;) {
      int p = rand_operand(rng, s);
      int q = rand_operand(rng, s);
      if (sums.insert(p + q).second) {
        pr = {p, q};
        break;
      }
    }
  }
  std::ostringstream q, steps;
  q << "largest of ";
  int best = -1, best_idx = 0;
  for (int i = 0; i < 4; ++i) {
    const int sum = pairs[i].first + pairs[i].second;
    if (i) q << ", ";
    q << pairs[i].first << "+" << pairs[i].second;
    steps << pairs[i].first << "+" << pairs[i].second << "=" << sum << ". ";
    d.options[i] = std::to_string(sum);
    if (sum > best) {
      best = sum;
      best_idx = i;
    }
  }
  q << "?";
  steps << "max=" << best << ". ";
  d.question = q.str();
  d.cot_steps = steps.str();
  d.answer_index = best_idx;
  return d;
}

QaItem finalize(const Draft& d, uint32_t prompt_id) {
  QaItem item;
  item.prompt_id = prompt_id;
  item.question = d.question;
  item.options = d.options;
  item.gold_label = static_cast<char>('A' + d.answer_index);
  item.gold_cot = d.cot_steps + "so " + item.gold_label + ". boxed{" +
                  item.gold_label + "}";
  return item;
}

}  // namespace

Corpus generate_corpus(const TaskSpec& spec) {
  if (spec.train_n < 1 || spec.eval_n < 1)
    throw Error(ErrorKind::SpecInfeasible, "split sizes must be >= 1");
  if (spec.operand_min < 0 || spec.operand_max < spec.operand_min)
    throw Error(ErrorKind::SpecInfeasible, "bad operand range");
  if (spec.kind == TaskKind::ArithChain && spec.chain_len < 1)
    throw Error(ErrorKind::SpecInfeasible, "chain_len must be >= 1");

  const size_t total = static_cast<size_t>(spec.train_n) + spec.eval_n;
  Rng rng = derive_stream(spec.seed, "taskgen");
  std::set<std::string> seen;
  std::vector<QaItem> items;
  items.reserve(total);
  size_t attempts = 0;
  const size_t max_attempts = 200 * total;
  while (items.size() < total) {
    if (++attempts > max_attempts)
      throw Error(ErrorKind::SpecInfeasible,
                  "could not generate " + std::to_string(total) +
                      " distinct questions for task " + spec.name);
    Draft d = spec.kind == TaskKind::ArithChain ? make_arith_chain(rng, spec)
                                                : make_pick_largest(rng, spec);
    if (!seen.insert(d.question).second) continue;
    items.push_back(finalize(d, static_cast<uint32_t>(items.size())));
  }

  Corpus corpus;
  corpus.spec = spec;
  corpus.train.assign(items.begin(), items.begin() + spec.train_n);
  corpus.eval_items.assign(items.begin() + spec.train_n, items.end());

  uint64_t h = 0xcbf29ce484222325ULL;
  const std::string jsonl = corpus_jsonl(corpus);
  for (char c : jsonl) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  corpus.content_hash = h;
  return corpus;
}

std::string render_prompt(const QaItem& item) {
  std::ostringstream os;
  os << "q: " << item.question << "\n";
  for (int i = 0; i < 4; ++i) {
    if (i) os << " ";
    os << static_cast<char>('A' + i) << ")" << item.options[i];
  }
  os << "\nreason step by step. end with boxed{letter}.\n";
  return os.str();
}

std::string corpus_jsonl(const Corpus& corpus) {
  std::ostringstream os;
  for (const auto& split : {&corpus.train, &corpus.eval_items})
    for (const QaItem& item : *split) os << item.to_json().dump() << "\n";
  return os.str();
}

void write_corpus_jsonl(const Corpus& corpus,
                        const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  f << corpus_jsonl(corpus);
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
}

TaskSpec builtin_task(const std::string& name) {
  TaskSpec s;
  if (name == "modchain") {
    s.name = "modchain";
    s.kind = TaskKind::ArithChain;
    s.operand_min = 2;
    s.operand_max = 9;
    s.chain_len = 2;
    s.train_n = 96;
    s.eval_n = 48;
    s.seed = 11;
    return s;
  }
  if (name == "picklarge") {
    s.name = "picklarge";
    s.kind = TaskKind::PickLargest;
    s.operand_min = 2;
    s.operand_max = 9;
    s.train_n = 96;
    s.eval_n = 48;
    s.seed = 12;
    return s;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown task: " + name);
}

std::vector<std::string> builtin_task_names() {
  return {"modchain", "picklarge"};
}

}  // namespace orpod::task
