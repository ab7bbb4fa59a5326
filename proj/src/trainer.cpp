#include "orpodistill/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/parallel.hpp"
#include "orpodistill/rouge.hpp"

namespace orpod::train {

const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::zero_shot: return "zero_shot";
    case TrainMode::single_cot_ft: return "single_cot_ft";
    case TrainMode::diverse_cot_ft: return "diverse_cot_ft";
    case TrainMode::orpo_off: return "orpo_off";
    case TrainMode::orpo_on: return "orpo_on";
    case TrainMode::orpo_mixed: return "orpo_mixed";
    case TrainMode::orpo_teacher_neg: return "orpo_teacher_neg";
  }
  return "unknown";
}

TrainMode mode_from_string(const std::string& s) {
  for (TrainMode m :
       {TrainMode::zero_shot, TrainMode::single_cot_ft,
        TrainMode::diverse_cot_ft, TrainMode::orpo_off, TrainMode::orpo_on,
        TrainMode::orpo_mixed, TrainMode::orpo_teacher_neg})
    if (s == mode_name(m)) return m;
  throw Error(ErrorKind::InvalidConfig, "unknown mode: " + s);
}

void TrainConfig::validate() {
  switch (mode) {
    case TrainMode::orpo_off:
    case TrainMode::orpo_teacher_neg:
      phi = 0.0;
      break;
    case TrainMode::orpo_on:
      phi = 1.0;
      break;
    default:
      break;
  }
  if (phi < 0.0 || phi > 1.0)
    throw Error(ErrorKind::InvalidConfig, "phi must be in [0,1]");
  if (k < 1) throw Error(ErrorKind::InvalidConfig, "K must be >= 1");
  if (lambda < 0.0)
    throw Error(ErrorKind::InvalidConfig, "lambda must be >= 0");
  if (!(tau > 0.0))
    throw Error(ErrorKind::InvalidConfig, "tau must be > 0");
  if (!(eta > 0.0)) throw Error(ErrorKind::InvalidConfig, "eta must be > 0");
  if (epochs < 0)
    throw Error(ErrorKind::InvalidConfig, "epochs must be >= 0");
  if (batch_size < 1)
    throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (!(rouge_threshold > 0.0) || rouge_threshold > 1.0)
    throw Error(ErrorKind::InvalidConfig, "rouge_threshold must be in (0,1]");
  if (max_gen_len < 1)
    throw Error(ErrorKind::InvalidConfig, "max_gen_len must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", mode_name(mode)},
          {"phi", phi},
          {"k", k},
          {"lambda", lambda},
          {"tau", tau},
          {"eta", eta},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"rouge_threshold", rouge_threshold},
          {"seed", seed},
          {"max_gen_len", max_gen_len}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.phi = j.value("phi", c.mode == TrainMode::orpo_on ? 1.0
                         : c.mode == TrainMode::orpo_mixed ? 0.5
                                                           : 0.0);
  c.k = j.value("k", 8);
  c.lambda = j.value("lambda", 1.0);
  c.tau = j.value("tau", 0.8);
  c.eta = j.value("eta", 1e-3);
  c.epochs = j.value("epochs", 5);
  c.batch_size = j.value("batch_size", 8);
  c.rouge_threshold = j.value("rouge_threshold", 0.80);
  c.seed = j.value("seed", uint64_t{0});
  c.max_gen_len = j.value("max_gen_len", 64);
  return c;
}

uint64_t TrainConfig::hash() const {
  const std::string s = to_json().dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

PoolChoice gate(double u, double phi) {
  if (u < 0.0 || u > 1.0 || phi < 0.0 || phi > 1.0)
    throw Error(ErrorKind::InvalidConfig, "gate inputs must be in [0,1]");
  return u <= phi ? PoolChoice::latest : PoolChoice::base;
}

double negative_diversity(const pref::TracePool& pool) {
  double sum = 0.0;
  size_t prompts = 0;
  for (const auto& [prompt_id, traces] : pool.by_prompt) {
    if (traces.empty()) continue;
    ++prompts;
    if (traces.size() == 1) {
      sum += 1.0;
      continue;
    }
    double pair_sum = 0.0;
    size_t pairs = 0;
    for (size_t i = 0; i < traces.size(); ++i)
      for (size_t j = i + 1; j < traces.size(); ++j) {
        pair_sum += text::rouge_l(traces[i].tokens, traces[j].tokens);
        ++pairs;
      }
    sum += 1.0 - pair_sum / static_cast<double>(pairs);
  }
  if (prompts == 0)
    throw Error(ErrorKind::EmptyPool, "diversity of an empty pool");
  return sum / static_cast<double>(prompts);
}

void TrainLog::write_jsonl(const std::filesystem::path& p) const {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  for (const IterRecord& r : iters) {
    nlohmann::json j = {{"type", "iter"},
                        {"epoch", r.epoch},
                        {"iter", r.iter},
                        {"n_records", r.n_records},
                        {"sft_only", r.sft_only},
                        {"sft_loss", r.mean_terms.sft_loss},
                        {"or_loss", r.mean_terms.or_loss},
                        {"total", r.mean_terms.total},
                        {"lambda", r.mean_terms.lambda},
                        {"wall_ms", r.wall_ms}};
    if (r.gated) {
      j["u"] = r.u;
      j["pool"] = r.pool == PoolChoice::latest ? "latest" : "base";
    }
    f << j.dump() << "\n";
  }
  for (const EpochRecord& r : epochs) {
    nlohmann::json j = {{"type", "epoch"},
                        {"epoch", r.epoch},
                        {"eval_accuracy", r.eval_accuracy},
                        {"refresh_source_epoch", r.refresh_source_epoch},
                        {"diversity_pre", r.diversity_pre},
                        {"diversity_post", r.diversity_post},
                        {"latest_pool_traces", r.latest_pool_traces},
                        {"prompts_without_negatives",
                         r.prompts_without_negatives}};
    f << j.dump() << "\n";
  }
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
}

namespace {

struct TrainingRecord {
  uint32_t prompt_id = 0;
  int sample_index = 0;
  const text::TokenSeq* prompt_tokens = nullptr;
  const pref::Trace* chosen = nullptr;
};

// Response tokens fed to the loss: the sampled trace plus a closing EOS so
// the student learns to stop.
text::TokenSeq with_eos(const text::TokenSeq& tokens, int eos_id) {
  text::TokenSeq out = tokens;
  out.ids.push_back(eos_id);
  return out;
}

struct JobResult {
  std::vector<double> grad;
  orpo::OrpoTerms terms;
  bool has_rejected = false;
};

struct EngineSetup {
  TrainConfig config;
  const task::Corpus* corpus = nullptr;
  const text::Vocab* vocab = nullptr;
  RunIo io;
  EvalFn eval_fn;
  const pref::PoolPair* teacher_pools = nullptr;
};

void fisher_yates(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

std::string default_run_id(const TrainConfig& config) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config.hash()));
  return std::string(mode_name(config.mode)) + "-" + buf;
}

// Shared training engine behind distill and sft_finetune. When
// `use_or_term` is false, no gate/pool machinery runs and the loss is pure
// NLL on the chosen traces.
DistillResult run_engine(const EngineSetup& setup,
                         pref::TextGenerator& teacher,
                         const lm::LmParams& student0, bool use_or_term,
                         int traces_per_prompt) {
  TrainConfig config = setup.config;
  config.validate();
  const task::Corpus& corpus = *setup.corpus;
  const text::Vocab& vocab = *setup.vocab;
  const lm::ArchDescriptor& arch = student0.arch;

  // Guard: every prompt + sampled response must fit the student context.
  {
    size_t max_prompt = 0;
    for (const task::QaItem& item : corpus.train)
      max_prompt = std::max(
          max_prompt, text::tokenize(task::render_prompt(item), vocab).size());
    if (1 + max_prompt + config.max_gen_len + 1 >
        static_cast<size_t>(arch.context_len))
      throw Error(ErrorKind::InvalidConfig,
                  "context_len " + std::to_string(arch.context_len) +
                      " too small for prompts of " +
                      std::to_string(max_prompt) + " plus max_gen_len " +
                      std::to_string(config.max_gen_len));
  }

  const std::string run_id =
      setup.io.run_id.empty() ? default_run_id(config) : setup.io.run_id;
  const uint64_t config_hash = config.hash();

  // Teacher pools are sampled once, from a stream that depends only on
  // (seed), so every mode sharing a seed sees identical teacher data.
  pref::PoolPair built_pools;
  if (!setup.teacher_pools)
    built_pools = pref::build_teacher_pools(
        teacher, corpus.train, config.k, config.tau, config.rouge_threshold,
        stream_seed(config.seed, "teacher_pool"), vocab);
  const pref::PoolPair& teacher_pools =
      setup.teacher_pools ? *setup.teacher_pools : built_pools;

  const bool teacher_negatives = config.mode == TrainMode::orpo_teacher_neg;

  // Pre-tokenized prompts for every prompt with at least one positive.
  std::map<uint32_t, text::TokenSeq> prompt_tokens;
  for (const task::QaItem& item : corpus.train)
    if (teacher_pools.positives.find(item.prompt_id))
      prompt_tokens[item.prompt_id] =
          text::tokenize(task::render_prompt(item), vocab);

  // The per-epoch unit list: one record per surviving teacher positive
  // (capped per prompt for the single-CoT baseline).
  std::vector<TrainingRecord> records;
  for (const auto& [prompt_id, traces] : teacher_pools.positives.by_prompt) {
    int used = 0;
    for (const pref::Trace& t : traces) {
      if (traces_per_prompt > 0 && used >= traces_per_prompt) break;
      records.push_back(TrainingRecord{prompt_id, t.sample_index,
                                       &prompt_tokens.at(prompt_id), &t});
      ++used;
    }
  }
  std::sort(records.begin(), records.end(),
            [](const TrainingRecord& a, const TrainingRecord& b) {
              return std::tie(a.prompt_id, a.sample_index) <
                     std::tie(b.prompt_id, b.sample_index);
            });

  DistillResult result;
  lm::LmParams params = student0;
  lm::AdamState opt(params.theta.size());

  const std::string rng_note =
      "streams derived from seed " + std::to_string(config.seed);
  auto make_ckpt = [&](int epoch) {
    return lm::Checkpoint{params, epoch, rng_note, run_id, config_hash};
  };
  result.checkpoints.push_back(lm::Checkpoint{student0, 0, rng_note, run_id,
                                              config_hash});

  if (setup.io.enabled()) {
    std::filesystem::create_directories(setup.io.run_dir);
    lm::save_checkpoint(result.checkpoints.back(),
                        setup.io.run_dir / "epoch-0.ckpt");
    pref::write_pool_jsonl(teacher_pools.positives,
                           setup.io.run_dir / "teacher_pos.jsonl");
    pref::write_pool_jsonl(teacher_pools.negatives,
                           setup.io.run_dir / "teacher_neg.jsonl");
    std::ofstream stats(setup.io.run_dir / "teacher_pool_stats.json");
    stats << teacher_pools.stats.to_json().dump(2) << "\n";
  }

  // Negative pools. The base pool is sampled from the pre-distill student
  // (or from the teacher for the ablation); the latest pool starts as an
  // alias of it and is refreshed from each end-of-epoch checkpoint.
  pref::TracePool base_pool, refreshed_pool;
  pref::TracePool base_pre_dedup;
  const pref::TracePool* latest_pool = &base_pool;
  int latest_source_epoch = 0;
  double latest_div_pre = -1.0, latest_div_post = -1.0;
  int latest_missing = 0;

  auto refresh_from = [&](const lm::LmParams& gen_params, int source_epoch,
                          pref::PoolTag tag, pref::TracePool& dst,
                          pref::TracePool* pre_dedup_out) {
    pref::LmTextGenerator gen(gen_params, vocab, config.max_gen_len);
    pref::SampleStats stats;
    auto raw = pref::sample_and_classify(
        gen, corpus.train, config.k, config.tau,
        stream_seed(config.seed, "neg_pool", source_epoch), vocab,
        pref::TraceSource::student, source_epoch, &stats);
    pref::TracePool pre = pref::pool_from_raw(raw, pref::Polarity::negative,
                                              tag, 1.0, nullptr);
    dst = pref::pool_from_raw(raw, pref::Polarity::negative, tag,
                              config.rouge_threshold, nullptr);
    if (pre_dedup_out) *pre_dedup_out = pre;
    latest_div_pre = pre.empty() ? -1.0 : negative_diversity(pre);
    latest_div_post = dst.empty() ? -1.0 : negative_diversity(dst);
    latest_missing = 0;
    for (const task::QaItem& item : corpus.train)
      if (!dst.find(item.prompt_id)) ++latest_missing;
  };

  if (use_or_term) {
    if (teacher_negatives) {
      base_pool = teacher_pools.negatives;
      latest_div_pre = base_pool.empty() ? -1.0 : negative_diversity(base_pool);
      latest_div_post = latest_div_pre;
      for (const task::QaItem& item : corpus.train)
        if (!base_pool.find(item.prompt_id)) ++latest_missing;
    } else {
      refresh_from(student0, 0, pref::PoolTag::base_student, base_pool,
                   &base_pre_dedup);
    }
    if (setup.io.enabled())
      pref::write_pool_jsonl(base_pool, setup.io.run_dir / "neg_base.jsonl");
  }

  const int eos_id = arch.eos_id;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord erec;
    erec.epoch = epoch;
    erec.refresh_source_epoch = latest_source_epoch;
    erec.diversity_pre = latest_div_pre;
    erec.diversity_post = latest_div_post;
    erec.latest_pool_traces = latest_pool->trace_count();
    erec.prompts_without_negatives = latest_missing;

    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = derive_stream(config.seed, "shuffle", epoch);
    fisher_yates(order, shuffle_rng);

    const size_t n_batches =
        (order.size() + config.batch_size - 1) / config.batch_size;
    for (size_t b = 0; b < n_batches; ++b) {
      const auto wall_start = std::chrono::steady_clock::now();
      const int iter = static_cast<int>(b) + 1;
      const size_t lo = b * config.batch_size;
      const size_t hi = std::min(order.size(), lo + config.batch_size);

      IterRecord irec;
      irec.epoch = epoch;
      irec.iter = iter;

      const pref::TracePool* pool = nullptr;
      if (use_or_term) {
        // One gate draw per iteration; u in (0,1] so the phi boundaries
        // behave exactly (phi=0 never gates latest, phi=1 always does).
        Rng gate_rng = derive_stream(config.seed, "gate", epoch, iter);
        const double u = 1.0 - gate_rng.uniform();
        const PoolChoice choice = gate(u, config.phi);
        pool = choice == PoolChoice::latest ? latest_pool : &base_pool;
        irec.u = u;
        irec.pool = choice;
        irec.gated = true;
      }

      // Assemble the batch: chosen from the record, rejected drawn
      // uniformly from the gated pool (with replacement when positives
      // outnumber negatives); SFT-only when the prompt has no negatives.
      struct Job {
        const TrainingRecord* rec;
        const pref::Trace* rejected = nullptr;
      };
      std::vector<Job> jobs;
      jobs.reserve(hi - lo);
      Rng pair_rng = derive_stream(config.seed, "pair", epoch, iter);
      for (size_t i = lo; i < hi; ++i) {
        const TrainingRecord& rec = records[order[i]];
        Job job{&rec, nullptr};
        if (use_or_term) {
          const std::vector<pref::Trace>* negs = pool->find(rec.prompt_id);
          if (negs && !negs->empty())
            job.rejected = &(*negs)[pair_rng.uniform_int(negs->size())];
        }
        jobs.push_back(job);
      }
      // Deterministic reduction order regardless of scheduling.
      std::sort(jobs.begin(), jobs.end(), [](const Job& a, const Job& b) {
        return std::tie(a.rec->prompt_id, a.rec->sample_index) <
               std::tie(b.rec->prompt_id, b.rec->sample_index);
      });

      const int n_jobs = static_cast<int>(jobs.size());
      std::vector<JobResult> results(n_jobs);
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(par::max_threads())
      for (int j = 0; j < n_jobs; ++j) {
        try {
          const Job& job = jobs[j];
          lm::Tape tape(params);
          const text::TokenSeq chosen =
              with_eos(job.rec->chosen->tokens, eos_id);
          int total_node;
          if (job.rejected) {
            const text::TokenSeq rejected =
                with_eos(job.rejected->tokens, eos_id);
            total_node = orpo::build_orpo_total(
                tape, *job.rec->prompt_tokens, chosen, rejected,
                config.lambda, &results[j].terms);
            results[j].has_rejected = true;
          } else {
            total_node = orpo::build_sft_total(tape, *job.rec->prompt_tokens,
                                               chosen, &results[j].terms);
          }
          if (!std::isfinite(results[j].terms.total))
            throw Error(ErrorKind::NonFiniteLoss,
                        "non-finite loss on prompt " +
                            std::to_string(job.rec->prompt_id));
          tape.backward(total_node);
          results[j].grad = tape.param_grad();
        } catch (...) {
#pragma omp critical(train_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      // Mean gradient, summed in the sorted order fixed above.
      std::vector<double> grad_mean(params.theta.size(), 0.0);
      for (const JobResult& r : results)
        for (size_t i = 0; i < grad_mean.size(); ++i)
          grad_mean[i] += r.grad[i];
      const double inv_n = 1.0 / n_jobs;
      for (double& g : grad_mean) g *= inv_n;

      orpo::OrpoTerms mean;
      mean.lambda = config.lambda;
      int with_rejected = 0;
      for (const JobResult& r : results) {
        mean.sft_loss += r.terms.sft_loss * inv_n;
        mean.or_loss += r.terms.or_loss * inv_n;
        mean.total += r.terms.total * inv_n;
        if (r.has_rejected) {
          mean.log_odds_chosen += r.terms.log_odds_chosen;
          mean.log_odds_rejected += r.terms.log_odds_rejected;
          ++with_rejected;
        }
      }
      if (with_rejected > 0) {
        mean.log_odds_chosen /= with_rejected;
        mean.log_odds_rejected /= with_rejected;
      }
      irec.mean_terms = mean;
      irec.n_records = n_jobs;
      irec.sft_only = n_jobs - with_rejected;

      lm::optimizer_step(params, grad_mean, opt, config.eta);

      irec.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - wall_start)
                         .count();
      result.log.iters.push_back(irec);
    }

    result.checkpoints.push_back(make_ckpt(epoch));
    if (setup.io.enabled())
      lm::save_checkpoint(result.checkpoints.back(),
                          setup.io.run_dir /
                              ("epoch-" + std::to_string(epoch) + ".ckpt"));
    if (setup.eval_fn) erec.eval_accuracy = setup.eval_fn(params);
    result.log.epochs.push_back(erec);

    // Refresh the latest pool from this epoch's checkpoint for the next
    // epoch. Skipped entirely at phi = 0, so an off-policy run never
    // samples any checkpoint other than epoch 0.
    if (use_or_term && !teacher_negatives && config.phi > 0.0 &&
        epoch < config.epochs) {
      refresh_from(params, epoch, pref::PoolTag::latest_student,
                   refreshed_pool, nullptr);
      latest_pool = &refreshed_pool;
      latest_source_epoch = epoch;
    }
  }

  result.final_params = params;
  if (setup.io.enabled()) {
    if (use_or_term && !teacher_negatives && latest_pool != &base_pool)
      pref::write_pool_jsonl(*latest_pool,
                             setup.io.run_dir / "neg_latest_final.jsonl");
    result.log.write_jsonl(setup.io.run_dir / "trainlog.jsonl");
    nlohmann::json run = {{"run_id", run_id},
                          {"config", config.to_json()},
                          {"config_hash", config_hash},
                          {"corpus_hash", corpus.content_hash},
                          {"task", corpus.spec.to_json()},
                          {"arch", arch.to_json()},
                          {"records_per_epoch", records.size()}};
    std::ofstream f(setup.io.run_dir / "run.json");
    if (!f)
      throw Error(ErrorKind::IoError,
                  "cannot write run.json under " + setup.io.run_dir.string());
    f << run.dump(2) << "\n";
  }
  return result;
}

}  // namespace

DistillResult distill(const TrainConfig& config, pref::TextGenerator& teacher,
                      const lm::LmParams& student0, const task::Corpus& corpus,
                      const text::Vocab& vocab, const RunIo& io,
                      const EvalFn& eval_fn,
                      const pref::PoolPair* teacher_pools) {
  EngineSetup setup{config, &corpus, &vocab, io, eval_fn, teacher_pools};
  return run_engine(setup, teacher, student0, /*use_or_term=*/true,
                    /*traces_per_prompt=*/0);
}

DistillResult sft_finetune(const TrainConfig& config,
                           pref::TextGenerator& teacher,
                           const lm::LmParams& student0,
                           const task::Corpus& corpus,
                           const text::Vocab& vocab, int traces_per_prompt,
                           const RunIo& io, const EvalFn& eval_fn,
                           const pref::PoolPair* teacher_pools) {
  if (traces_per_prompt < 1)
    throw Error(ErrorKind::InvalidConfig, "traces_per_prompt must be >= 1");
  EngineSetup setup{config, &corpus, &vocab, io, eval_fn, teacher_pools};
  return run_engine(setup, teacher, student0, /*use_or_term=*/false,
                    traces_per_prompt);
}

}  // namespace orpod::train
