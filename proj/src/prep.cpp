#include "orpodistill/prep.hpp"

#include <omp.h>

#include <algorithm>

#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"
#include "orpodistill/parallel.hpp"

namespace orpod::harness {

nlohmann::json PrepConfig::to_json() const {
  return {{"band_lo", band_lo},   {"band_hi", band_hi},
          {"max_epochs", max_epochs}, {"batch_size", batch_size},
          {"eta", eta},           {"seed", seed},
          {"prep_items", prep_items}, {"max_gen_len", max_gen_len},
          {"eval_every", eval_every}};
}

PrepConfig PrepConfig::from_json(const nlohmann::json& j) {
  PrepConfig c;
  c.band_lo = j.value("band_lo", c.band_lo);
  c.band_hi = j.value("band_hi", c.band_hi);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eta = j.value("eta", c.eta);
  c.seed = j.value("seed", c.seed);
  c.prep_items = j.value("prep_items", c.prep_items);
  c.max_gen_len = j.value("max_gen_len", c.max_gen_len);
  c.eval_every = j.value("eval_every", c.eval_every);
  return c;
}

PrepResult prepare_model(const lm::ArchDescriptor& arch,
                         const task::Corpus& corpus, const text::Vocab& vocab,
                         const PrepConfig& config) {
  if (config.batch_size < 1 || config.max_epochs < 0 || config.eval_every < 1)
    throw Error(ErrorKind::InvalidConfig, "bad prep config");

  std::vector<const task::QaItem*> items;
  const int n = config.prep_items > 0
                    ? std::min<int>(config.prep_items,
                                    static_cast<int>(corpus.train.size()))
                    : static_cast<int>(corpus.train.size());
  for (int i = 0; i < n; ++i) items.push_back(&corpus.train[i]);

  // Tokenized (prompt, gold CoT + EOS) pairs.
  struct Pair {
    text::TokenSeq prompt, response;
  };
  std::vector<Pair> pairs;
  for (const task::QaItem* item : items) {
    Pair p;
    p.prompt = text::tokenize(task::render_prompt(*item), vocab);
    p.response = text::tokenize(item->gold_cot, vocab);
    p.response.ids.push_back(arch.eos_id);
    const size_t fed = 1 + p.prompt.size() + p.response.size() - 1;
    if (fed > static_cast<size_t>(arch.context_len))
      throw Error(ErrorKind::ContextOverflow,
                  "gold CoT does not fit model context");
    pairs.push_back(std::move(p));
  }

  PrepResult result;
  result.params = lm::init_params(arch, stream_seed(config.seed, "prep_init"));
  lm::AdamState opt(result.params.theta.size());

  auto eval_now = [&](const lm::LmParams& params) {
    return evaluate(params, corpus.eval_items, vocab, config.max_gen_len,
                    "prep", corpus.spec.name)
        .accuracy;
  };

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = derive_stream(config.seed, "prep_shuffle", epoch);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);

    for (size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const size_t hi =
          std::min(order.size(), lo + static_cast<size_t>(config.batch_size));
      std::vector<size_t> batch(order.begin() + lo, order.begin() + hi);
      std::sort(batch.begin(), batch.end());
      const int n_jobs = static_cast<int>(batch.size());
      std::vector<std::vector<double>> grads(n_jobs);
      std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic) num_threads(par::max_threads())
      for (int j = 0; j < n_jobs; ++j) {
        try {
          const Pair& p = pairs[batch[j]];
          lm::Tape tape(result.params);
          int node = orpo::build_sft_total(tape, p.prompt, p.response);
          if (!std::isfinite(tape.scalar(node)))
            throw Error(ErrorKind::NonFiniteLoss, "non-finite prep loss");
          tape.backward(node);
          grads[j] = tape.param_grad();
        } catch (...) {
#pragma omp critical(prep_failure)
          if (!failure) failure = std::current_exception();
        }
      }
      if (failure) std::rethrow_exception(failure);

      std::vector<double> grad_mean(result.params.theta.size(), 0.0);
      for (const auto& g : grads)
        for (size_t i = 0; i < grad_mean.size(); ++i) grad_mean[i] += g[i];
      const double inv = 1.0 / n_jobs;
      for (double& g : grad_mean) g *= inv;
      lm::optimizer_step(result.params, grad_mean, opt, config.eta);
    }

    result.epochs_used = epoch;
    if (epoch % config.eval_every == 0 || epoch == config.max_epochs) {
      result.accuracy = eval_now(result.params);
      result.in_band = result.accuracy >= config.band_lo &&
                       result.accuracy <= config.band_hi;
      if (result.in_band) break;
    }
  }
  if (result.epochs_used == 0) {  // max_epochs == 0: untouched model
    result.accuracy = eval_now(result.params);
    result.in_band = result.accuracy >= config.band_lo &&
                     result.accuracy <= config.band_hi;
  }
  return result;
}

PrepResult prepare_model_cached(const lm::ArchDescriptor& arch,
                                const task::Corpus& corpus,
                                const text::Vocab& vocab,
                                const PrepConfig& config,
                                const std::filesystem::path& cache_dir) {
  nlohmann::json key = {{"arch", arch.to_json()},
                        {"corpus_hash", corpus.content_hash},
                        {"prep", config.to_json()}};
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : key.dump()) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char name[64];
  std::snprintf(name, sizeof name, "prep-%016llx.ckpt",
                static_cast<unsigned long long>(h));
  const std::filesystem::path path = cache_dir / name;

  if (std::filesystem::exists(path)) {
    lm::Checkpoint ckpt = lm::load_checkpoint(path);
    PrepResult result;
    result.params = std::move(ckpt.params);
    result.epochs_used = ckpt.epoch;
    result.accuracy = evaluate(result.params, corpus.eval_items, vocab,
                               config.max_gen_len, "prep", corpus.spec.name)
                          .accuracy;
    result.in_band =
        result.accuracy >= config.band_lo && result.accuracy <= config.band_hi;
    return result;
  }

  PrepResult result = prepare_model(arch, corpus, vocab, config);
  std::filesystem::create_directories(cache_dir);
  lm::Checkpoint ckpt{result.params, result.epochs_used,
                      "prep seed " + std::to_string(config.seed), name, h};
  lm::save_checkpoint(ckpt, path);
  return result;
}

}  // namespace orpod::harness
