#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "orpodistill/error.hpp"
#include "orpodistill/matrix.hpp"
#include "orpodistill/model.hpp"

namespace fs = std::filesystem;
using namespace orpod;

namespace {

struct RunArgs {
  std::string task = "modchain";
  std::string mode = "orpo_mixed";
  std::string student = "student-conv-a";
  std::string teacher = "teacher-attn";
  double phi = 0.5;
  int k = 8;
  double lambda = 1.0;
  double temp = 0.8;
  int epochs = 5;
  double eta = 1e-3;
  int batch_size = 8;
  double rouge_threshold = 0.80;
  int max_gen_len = 56;
  uint64_t seed = 1;
  std::string out = "out";
};

harness::PrepConfig teacher_prep_defaults() {
  harness::MatrixConfig def = harness::MatrixConfig::default_config();
  return def.teacher_prep;
}

harness::PrepConfig student_prep_defaults() {
  harness::MatrixConfig def = harness::MatrixConfig::default_config();
  return def.students.front().prep;
}

int cmd_run(const RunArgs& args) {
  const text::Vocab vocab = text::Vocab::default_vocab();
  const task::TaskSpec spec = task::builtin_task(args.task);
  const task::Corpus corpus = task::generate_corpus(spec);
  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);

  train::TrainConfig config;
  config.mode = train::mode_from_string(args.mode);
  config.phi = args.phi;
  config.k = args.k;
  config.lambda = args.lambda;
  config.tau = args.temp;
  config.eta = args.eta;
  config.epochs = args.epochs;
  config.batch_size = args.batch_size;
  config.rouge_threshold = args.rouge_threshold;
  config.seed = args.seed;
  config.max_gen_len = args.max_gen_len;
  config.validate();

  const lm::ArchDescriptor teacher_arch =
      harness::builtin_arch(args.teacher, vocab);
  const lm::ArchDescriptor student_arch =
      harness::builtin_arch(args.student, vocab);

  std::cerr << "preparing teacher (" << args.teacher << ") on " << args.task
            << "...\n";
  const harness::PrepResult teacher = harness::prepare_model_cached(
      teacher_arch, corpus, vocab, teacher_prep_defaults(), out_dir / "prep");
  std::cerr << "teacher accuracy: " << teacher.accuracy << "% after "
            << teacher.epochs_used << " epochs\n";

  std::cerr << "preparing student (" << args.student << ")...\n";
  const harness::PrepResult student0 = harness::prepare_model_cached(
      student_arch, corpus, vocab, student_prep_defaults(), out_dir / "prep");
  std::cerr << "student zero-shot accuracy: " << student0.accuracy << "%\n";

  const std::string run_tag = args.task + "-" + args.student + "-" +
                              args.mode + "-seed" + std::to_string(args.seed);
  train::RunIo io;
  io.run_dir = out_dir / "runs" / run_tag;
  io.run_id = run_tag;

  auto eval_fn = [&](const lm::LmParams& p) {
    return harness::evaluate(p, corpus.eval_items, vocab, args.max_gen_len,
                             args.student, spec.name)
        .accuracy;
  };

  pref::LmTextGenerator teacher_gen(teacher.params, vocab, args.max_gen_len);
  lm::LmParams final_params = student0.params;
  if (config.mode == train::TrainMode::zero_shot) {
    // evaluation only
  } else if (config.mode == train::TrainMode::single_cot_ft ||
             config.mode == train::TrainMode::diverse_cot_ft) {
    const int tpp = config.mode == train::TrainMode::single_cot_ft ? 1
                                                                   : config.k;
    final_params = train::sft_finetune(config, teacher_gen, student0.params,
                                       corpus, vocab, tpp, io, eval_fn)
                       .final_params;
  } else {
    final_params = train::distill(config, teacher_gen, student0.params,
                                  corpus, vocab, io, eval_fn)
                       .final_params;
  }

  const harness::EvalReport report = harness::evaluate(
      final_params, corpus.eval_items, vocab, args.max_gen_len, args.student,
      spec.name);
  nlohmann::json summary = {{"task", spec.name},
                            {"mode", args.mode},
                            {"student", args.student},
                            {"seed", args.seed},
                            {"accuracy", report.accuracy},
                            {"n_items", report.n_items},
                            {"n_unparseable", report.n_unparseable},
                            {"teacher_accuracy", teacher.accuracy},
                            {"student0_accuracy", student0.accuracy},
                            {"run_dir", io.run_dir.string()}};
  if (io.enabled()) {
    fs::create_directories(io.run_dir);
    std::ofstream f(io.run_dir / "eval.json");
    f << report.to_json().dump(2) << "\n";
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_matrix(const std::string& config_path, const std::string& out) {
  harness::MatrixConfig config;
  if (config_path.empty()) {
    config = harness::MatrixConfig::default_config();
  } else {
    std::ifstream f(config_path);
    if (!f)
      throw Error(ErrorKind::IoError, "cannot open config " + config_path);
    nlohmann::json j;
    f >> j;
    config = harness::MatrixConfig::from_json(j);
  }
  const harness::ExperimentResult result =
      harness::run_matrix(config, fs::path(out));
  std::cout << harness::render_table(result, harness::TableFormat::text);
  int failed = 0;
  for (const auto& c : result.cells) failed += c.failed ? 1 : 0;
  if (failed > 0)
    std::cerr << failed << " cell(s) failed; see result.json\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& task_name,
             const std::string& split, int max_gen_len,
             const std::string& out) {
  const text::Vocab vocab = text::Vocab::default_vocab();
  const task::Corpus corpus =
      task::generate_corpus(task::builtin_task(task_name));
  const lm::Checkpoint ckpt = lm::load_checkpoint(ckpt_path);
  const auto& items = split == "train" ? corpus.train : corpus.eval_items;
  const harness::EvalReport report =
      harness::evaluate(ckpt.params, items, vocab, max_gen_len,
                        ckpt.run_id.empty() ? "checkpoint" : ckpt.run_id,
                        task_name + "/" + split);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw Error(ErrorKind::IoError, "cannot open " + out);
    f << report.to_json().dump(2) << "\n";
  }
  nlohmann::json summary = {{"model_id", report.model_id},
                            {"dataset_id", report.dataset_id},
                            {"accuracy", report.accuracy},
                            {"n_items", report.n_items},
                            {"n_unparseable", report.n_unparseable}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_corpus(const std::string& task_name, const std::string& out) {
  const task::Corpus corpus =
      task::generate_corpus(task::builtin_task(task_name));
  task::write_corpus_jsonl(corpus, out);
  std::cout << "wrote " << corpus.train.size() << " train + "
            << corpus.eval_items.size() << " eval items to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orpo-distill: preference-based black-box distillation lab"};
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "train one configuration");
  run->add_option("--task", run_args.task, "builtin task name");
  run->add_option("--mode", run_args.mode,
                  "zero_shot|single_cot_ft|diverse_cot_ft|orpo_off|orpo_on|"
                  "orpo_mixed|orpo_teacher_neg");
  run->add_option("--student", run_args.student, "student architecture");
  run->add_option("--teacher", run_args.teacher, "teacher architecture");
  run->add_option("--phi", run_args.phi, "policy fraction");
  run->add_option("--k", run_args.k, "diversity parameter K");
  run->add_option("--lambda", run_args.lambda, "odds-ratio weight");
  run->add_option("--temp", run_args.temp, "sampling temperature");
  run->add_option("--epochs", run_args.epochs, "training epochs");
  run->add_option("--eta", run_args.eta, "learning rate");
  run->add_option("--batch-size", run_args.batch_size, "batch size");
  run->add_option("--rouge-threshold", run_args.rouge_threshold,
                  "dedup threshold");
  run->add_option("--max-gen-len", run_args.max_gen_len,
                  "generation length cap");
  run->add_option("--seed", run_args.seed, "run seed");
  run->add_option("--out", run_args.out, "output directory");

  std::string matrix_config, matrix_out = "out";
  CLI::App* matrix =
      app.add_subcommand("matrix", "run the full experiment matrix");
  matrix->add_option("--config", matrix_config,
                     "matrix config JSON (omit for defaults)");
  matrix->add_option("--out", matrix_out, "output directory");

  std::string eval_ckpt, eval_task = "modchain", eval_split = "eval",
              eval_out;
  int eval_max_gen = 56;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--task", eval_task, "builtin task name");
  eval->add_option("--split", eval_split, "eval|train");
  eval->add_option("--max-gen-len", eval_max_gen, "generation length cap");
  eval->add_option("--out", eval_out, "write full report JSON here");

  std::string corpus_task = "modchain", corpus_out = "corpus.jsonl";
  CLI::App* corpus = app.add_subcommand("corpus", "export a task corpus");
  corpus->add_option("--task", corpus_task, "builtin task name");
  corpus->add_option("--out", corpus_out, "output JSONL path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (matrix->parsed()) return cmd_matrix(matrix_config, matrix_out);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_task, eval_split, eval_max_gen,
                      eval_out);
    if (corpus->parsed()) return cmd_corpus(corpus_task, corpus_out);
  } catch (const Error& e) {
    nlohmann::json err = {
        {"error",
         {{"kind", error_kind_name(e.kind())}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return e.kind() == ErrorKind::InvalidConfig ? 2 : 3;
  } catch (const std::exception& e) {
    nlohmann::json err = {
        {"error", {{"kind", "Internal"}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
