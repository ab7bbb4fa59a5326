#include "orpodistill/matrix.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "orpodistill/error.hpp"
#include "orpodistill/model.hpp"

namespace orpod::harness {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* mode_display(train::TrainMode m) {
  switch (m) {
    case train::TrainMode::zero_shot: return "Zero-shot CoT Eval";
    case train::TrainMode::single_cot_ft: return "Single CoT Fine Tuning";
    case train::TrainMode::diverse_cot_ft: return "Diverse CoT Fine Tuning";
    case train::TrainMode::orpo_off: return "Off Policy ORPO";
    case train::TrainMode::orpo_on: return "On Policy ORPO";
    case train::TrainMode::orpo_mixed: return "Mixed Policy ORPO";
    case train::TrainMode::orpo_teacher_neg:
      return "Off Policy ORPO (teacher negatives)";
  }
  return "?";
}

// Architecture entries in config files may omit the vocabulary binding;
// it is filled in from the run's vocab.
lm::ArchDescriptor arch_from_config(const nlohmann::json& j) {
  lm::ArchDescriptor a;
  a.family = j.at("family").get<std::string>();
  a.embed_dim = j.at("embed_dim").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.layers = j.at("layers").get<int>();
  a.context_len = j.at("context_len").get<int>();
  a.vocab_size = j.value("vocab_size", 0);
  a.bos_id = j.value("bos_id", -1);
  a.eos_id = j.value("eos_id", -1);
  return a;
}

void bind_vocab(lm::ArchDescriptor& arch, const text::Vocab& vocab) {
  arch.vocab_size = vocab.size();
  arch.bos_id = vocab.bos;
  arch.eos_id = vocab.eos;
}

}  // namespace

nlohmann::json CellResult::to_json() const {
  return {{"task", task},
          {"student", student},
          {"mode", train::mode_name(mode)},
          {"seed", seed},
          {"failed", failed},
          {"error", error},
          {"accuracy", accuracy},
          {"n_items", n_items},
          {"n_unparseable", n_unparseable},
          {"wall_s", wall_s},
          {"run_dir", run_dir}};
}

CellResult CellResult::from_json(const nlohmann::json& j) {
  CellResult c;
  c.task = j.at("task").get<std::string>();
  c.student = j.at("student").get<std::string>();
  c.mode = train::mode_from_string(j.at("mode").get<std::string>());
  c.seed = j.at("seed").get<uint64_t>();
  c.failed = j.at("failed").get<bool>();
  c.error = j.at("error").get<std::string>();
  c.accuracy = j.at("accuracy").get<double>();
  c.n_items = j.at("n_items").get<int>();
  c.n_unparseable = j.at("n_unparseable").get<int>();
  c.wall_s = j.value("wall_s", 0.0);
  c.run_dir = j.value("run_dir", std::string{});
  return c;
}

nlohmann::json MatrixConfig::to_json() const {
  nlohmann::json tasks_j = nlohmann::json::array();
  for (const auto& t : tasks) tasks_j.push_back(t.to_json());
  nlohmann::json students_j = nlohmann::json::array();
  for (const auto& s : students)
    students_j.push_back({{"name", s.name},
                          {"arch", s.arch.to_json()},
                          {"prep", s.prep.to_json()}});
  nlohmann::json modes_j = nlohmann::json::array();
  for (auto m : modes) modes_j.push_back(train::mode_name(m));
  return {{"tasks", tasks_j},
          {"teacher", {{"arch", teacher_arch.to_json()},
                       {"prep", teacher_prep.to_json()}}},
          {"students", students_j},
          {"modes", modes_j},
          {"seeds", seeds},
          {"train", base.to_json()},
          {"eval_max_gen_len", eval_max_gen_len}};
}

MatrixConfig MatrixConfig::from_json(const nlohmann::json& j) {
  MatrixConfig c;
  for (const auto& t : j.at("tasks")) c.tasks.push_back(task::TaskSpec::from_json(t));
  c.teacher_arch = arch_from_config(j.at("teacher").at("arch"));
  c.teacher_prep = PrepConfig::from_json(j.at("teacher").at("prep"));
  for (const auto& s : j.at("students"))
    c.students.push_back(StudentSpec{s.at("name").get<std::string>(),
                                     arch_from_config(s.at("arch")),
                                     PrepConfig::from_json(s.at("prep"))});
  for (const auto& m : j.at("modes"))
    c.modes.push_back(train::mode_from_string(m.get<std::string>()));
  c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  c.base = train::TrainConfig::from_json(j.at("train"));
  c.eval_max_gen_len = j.value("eval_max_gen_len", 64);
  return c;
}

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json cells_j = nlohmann::json::array();
  for (const auto& c : cells) cells_j.push_back(c.to_json());
  return {{"config", config_echo},
          {"cells", cells_j},
          {"teacher_accuracy", teacher_accuracy}};
}

ExperimentResult ExperimentResult::from_json(const nlohmann::json& j) {
  ExperimentResult r;
  r.config_echo = j.at("config");
  for (const auto& c : j.at("cells")) r.cells.push_back(CellResult::from_json(c));
  r.teacher_accuracy =
      j.at("teacher_accuracy").get<std::map<std::string, double>>();
  return r;
}

ExperimentResult run_matrix(const MatrixConfig& config,
                            const std::filesystem::path& out_dir) {
  const text::Vocab vocab = text::Vocab::default_vocab();
  std::filesystem::create_directories(out_dir);

  ExperimentResult result;
  result.config_echo = config.to_json();

  for (const task::TaskSpec& spec : config.tasks) {
    const task::Corpus corpus = task::generate_corpus(spec);
    task::write_corpus_jsonl(corpus, out_dir / (spec.name + ".jsonl"));
    {
      std::ofstream vf(out_dir / "vocab.json");
      vf << vocab.to_json().dump(2) << "\n";
    }

    lm::ArchDescriptor teacher_arch = config.teacher_arch;
    bind_vocab(teacher_arch, vocab);
    const PrepResult teacher =
        prepare_model_cached(teacher_arch, corpus, vocab, config.teacher_prep,
                             out_dir / "prep");
    result.teacher_accuracy[spec.name] = teacher.accuracy;

    for (const StudentSpec& sspec : config.students) {
      lm::ArchDescriptor student_arch = sspec.arch;
      bind_vocab(student_arch, vocab);
      const PrepResult student0 = prepare_model_cached(
          student_arch, corpus, vocab, sspec.prep, out_dir / "prep");

      for (uint64_t seed : config.seeds) {
        // One teacher sampling pass per (task, seed), shared by all modes.
        train::TrainConfig pool_probe = config.base;
        pool_probe.seed = seed;
        pref::LmTextGenerator teacher_gen(teacher.params, vocab,
                                          config.base.max_gen_len);
        pref::PoolPair teacher_pools;
        bool pools_ok = true;
        std::string pools_error;
        try {
          teacher_pools = pref::build_teacher_pools(
              teacher_gen, corpus.train, pool_probe.k, pool_probe.tau,
              pool_probe.rouge_threshold, stream_seed(seed, "teacher_pool"),
              vocab);
        } catch (const Error& e) {
          pools_ok = false;
          pools_error = e.what();
        }

        for (train::TrainMode mode : config.modes) {
          CellResult cell;
          cell.task = spec.name;
          cell.student = sspec.name;
          cell.mode = mode;
          cell.seed = seed;
          const auto t0 = std::chrono::steady_clock::now();
          try {
            train::TrainConfig tc = config.base;
            tc.mode = mode;
            tc.seed = seed;
            tc.validate();

            const std::string cell_tag = spec.name + "-" + sspec.name + "-" +
                                         train::mode_name(mode) + "-seed" +
                                         std::to_string(seed);
            train::RunIo io;
            io.run_dir = out_dir / "runs" / cell_tag;
            io.run_id = cell_tag;
            cell.run_dir = io.run_dir.string();

            auto eval_fn = [&](const lm::LmParams& p) {
              return evaluate(p, corpus.eval_items, vocab,
                              config.eval_max_gen_len, sspec.name, spec.name)
                  .accuracy;
            };

            lm::LmParams final_params = student0.params;
            if (mode == train::TrainMode::zero_shot) {
              // no training; evaluate the pre-distillation student
            } else if (mode == train::TrainMode::single_cot_ft ||
                       mode == train::TrainMode::diverse_cot_ft) {
              if (!pools_ok) throw Error(ErrorKind::EmptyPool, pools_error);
              const int tpp =
                  mode == train::TrainMode::single_cot_ft ? 1 : tc.k;
              final_params = train::sft_finetune(tc, teacher_gen,
                                                 student0.params, corpus,
                                                 vocab, tpp, io, eval_fn,
                                                 &teacher_pools)
                                 .final_params;
            } else {
              if (!pools_ok) throw Error(ErrorKind::EmptyPool, pools_error);
              final_params =
                  train::distill(tc, teacher_gen, student0.params, corpus,
                                 vocab, io, eval_fn, &teacher_pools)
                      .final_params;
            }

            const EvalReport report =
                evaluate(final_params, corpus.eval_items, vocab,
                         config.eval_max_gen_len, sspec.name, spec.name);
            cell.accuracy = report.accuracy;
            cell.n_items = report.n_items;
            cell.n_unparseable = report.n_unparseable;
          } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
          }
          cell.wall_s = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
          result.cells.push_back(cell);
        }
      }
    }
  }

  {
    std::ofstream f(out_dir / "result.json");
    if (!f) throw Error(ErrorKind::IoError, "cannot write result.json");
    f << result.to_json().dump(2) << "\n";
  }
  write_table(result, TableFormat::text, out_dir / "table.txt");
  write_table(result, TableFormat::csv, out_dir / "table.csv");
  write_table(result, TableFormat::json, out_dir / "table.json");
  return result;
}

// ---------- aggregation & rendering ----------

namespace {

struct AggCell {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

struct TableData {
  std::vector<std::string> tasks;
  std::vector<std::string> students;
  std::vector<train::TrainMode> modes;
  // (student, mode, task) -> aggregate over seeds
  std::map<std::string, AggCell> cells;  // key "student|mode|task"
  std::map<std::string, double> teacher_accuracy;

  static std::string key(const std::string& s, train::TrainMode m,
                         const std::string& t) {
    return s + "|" + train::mode_name(m) + "|" + t;
  }
};

TableData aggregate(const ExperimentResult& result) {
  TableData data;
  data.teacher_accuracy = result.teacher_accuracy;
  std::map<std::string, std::vector<double>> samples;
  for (const CellResult& c : result.cells) {
    if (std::find(data.tasks.begin(), data.tasks.end(), c.task) ==
        data.tasks.end())
      data.tasks.push_back(c.task);
    if (std::find(data.students.begin(), data.students.end(), c.student) ==
        data.students.end())
      data.students.push_back(c.student);
    if (std::find(data.modes.begin(), data.modes.end(), c.mode) ==
        data.modes.end())
      data.modes.push_back(c.mode);
    if (!c.failed)
      samples[TableData::key(c.student, c.mode, c.task)].push_back(c.accuracy);
  }
  for (const auto& [key, vals] : samples) {
    AggCell agg;
    agg.n = static_cast<int>(vals.size());
    for (double v : vals) agg.mean += v;
    agg.mean /= agg.n;
    if (agg.n > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - agg.mean) * (v - agg.mean);
      agg.stddev = std::sqrt(ss / (agg.n - 1));
    }
    data.cells[key] = agg;
  }
  return data;
}

std::string render_text(const TableData& data) {
  std::ostringstream os;
  const int name_w = 38, cell_w = 16;
  auto pad = [&](const std::string& s, int w) {
    std::string out = s;
    if (static_cast<int>(out.size()) < w) out.append(w - out.size(), ' ');
    return out;
  };
  os << pad("Experiments", name_w);
  for (const auto& t : data.tasks) os << "| " << pad(t, cell_w);
  os << "| Avg Acc%\n";
  os << std::string(name_w + (cell_w + 2) * (data.tasks.size() + 1), '-')
     << "\n";
  char buf[64];
  for (const auto& student : data.students) {
    os << student << "\n";
    for (auto mode : data.modes) {
      os << pad("  " + std::string(mode_display(mode)), name_w);
      double avg = 0.0;
      int avail = 0;
      for (const auto& t : data.tasks) {
        auto it = data.cells.find(TableData::key(student, mode, t));
        if (it == data.cells.end()) {
          os << "| " << pad("-", cell_w);
          continue;
        }
        std::snprintf(buf, sizeof buf, "%.2f +/- %.2f", it->second.mean,
                      it->second.stddev);
        os << "| " << pad(buf, cell_w);
        avg += it->second.mean;
        ++avail;
      }
      if (avail > 0) {
        std::snprintf(buf, sizeof buf, "%.2f", avg / avail);
        os << "| " << buf;
      } else {
        os << "| -";
      }
      os << "\n";
    }
  }
  os << "teacher\n";
  {
    os << pad("  Zero-shot CoT Eval Teacher", name_w);
    double avg = 0.0;
    int avail = 0;
    for (const auto& t : data.tasks) {
      auto it = data.teacher_accuracy.find(t);
      if (it == data.teacher_accuracy.end()) {
        os << "| " << pad("-", cell_w);
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.2f", it->second);
      os << "| " << pad(buf, cell_w);
      avg += it->second;
      ++avail;
    }
    if (avail > 0) {
      std::snprintf(buf, sizeof buf, "%.2f", avg / avail);
      os << "| " << buf;
    } else {
      os << "| -";
    }
    os << "\n";
  }
  return os.str();
}

std::string render_csv(const TableData& data) {
  std::ostringstream os;
  os << "student,mode,task,mean,stddev,n_seeds\n";
  for (const auto& student : data.students)
    for (auto mode : data.modes)
      for (const auto& t : data.tasks) {
        auto it = data.cells.find(TableData::key(student, mode, t));
        if (it == data.cells.end()) continue;
        os << student << "," << train::mode_name(mode) << "," << t << ","
           << fmt_double(it->second.mean) << ","
           << fmt_double(it->second.stddev) << "," << it->second.n << "\n";
      }
  for (const auto& [t, acc] : data.teacher_accuracy)
    os << "teacher,zero_shot," << t << "," << fmt_double(acc) << ",0,1\n";
  return os.str();
}

std::string render_json(const TableData& data) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& student : data.students)
    for (auto mode : data.modes)
      for (const auto& t : data.tasks) {
        auto it = data.cells.find(TableData::key(student, mode, t));
        if (it == data.cells.end()) continue;
        rows.push_back({{"student", student},
                        {"mode", train::mode_name(mode)},
                        {"task", t},
                        {"mean", it->second.mean},
                        {"stddev", it->second.stddev},
                        {"n_seeds", it->second.n}});
      }
  nlohmann::json teacher = nlohmann::json::object();
  for (const auto& [t, acc] : data.teacher_accuracy) teacher[t] = acc;
  return nlohmann::json{{"rows", rows}, {"teacher", teacher}}.dump(2) + "\n";
}

}  // namespace

std::string render_table(const ExperimentResult& result, TableFormat format) {
  const TableData data = aggregate(result);
  switch (format) {
    case TableFormat::text: return render_text(data);
    case TableFormat::csv: return render_csv(data);
    case TableFormat::json: return render_json(data);
  }
  return {};
}

void write_table(const ExperimentResult& result, TableFormat format,
                 const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + p.string());
  f << render_table(result, format);
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + p.string());
}

// ---------- registries & defaults ----------

lm::ArchDescriptor builtin_arch(const std::string& name,
                                const text::Vocab& vocab) {
  lm::ArchDescriptor a;
  if (name == "teacher-attn") {
    a.family = lm::kFamilyAttn;
    a.embed_dim = 64;
    a.hidden_dim = 256;
    a.layers = 2;
    a.context_len = 176;
  } else if (name == "student-conv-a") {
    a.family = lm::kFamilyConvGated;
    a.embed_dim = 32;
    a.hidden_dim = 128;
    a.layers = 2;
    a.context_len = 176;
  } else if (name == "student-conv-b") {
    a.family = lm::kFamilyConvGated;
    a.embed_dim = 48;
    a.hidden_dim = 192;
    a.layers = 2;
    a.context_len = 176;
  } else if (name == "student-attn") {
    a.family = lm::kFamilyAttn;
    a.embed_dim = 32;
    a.hidden_dim = 128;
    a.layers = 2;
    a.context_len = 176;
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown arch: " + name);
  }
  bind_vocab(a, vocab);
  return a;
}

std::vector<std::string> builtin_arch_names() {
  return {"teacher-attn", "student-conv-a", "student-conv-b", "student-attn"};
}

MatrixConfig MatrixConfig::default_config() {
  const text::Vocab vocab = text::Vocab::default_vocab();
  MatrixConfig c;
  c.tasks = {task::builtin_task("modchain"), task::builtin_task("picklarge")};
  c.teacher_arch = builtin_arch("teacher-attn", vocab);
  c.teacher_prep.band_lo = 60.0;
  c.teacher_prep.band_hi = 90.0;
  c.teacher_prep.max_epochs = 40;
  c.teacher_prep.batch_size = 12;
  c.teacher_prep.eta = 3e-3;
  c.teacher_prep.seed = 7;
  c.teacher_prep.prep_items = 0;
  c.teacher_prep.eval_every = 2;

  PrepConfig student_prep;
  student_prep.band_lo = 20.0;
  student_prep.band_hi = 45.0;
  student_prep.max_epochs = 10;
  student_prep.batch_size = 8;
  student_prep.eta = 3e-3;
  student_prep.seed = 9;
  student_prep.prep_items = 24;
  student_prep.eval_every = 1;

  c.students = {
      StudentSpec{"student-conv-a", builtin_arch("student-conv-a", vocab),
                  student_prep},
      StudentSpec{"student-conv-b", builtin_arch("student-conv-b", vocab),
                  student_prep},
  };
  c.modes = {train::TrainMode::zero_shot,     train::TrainMode::single_cot_ft,
             train::TrainMode::diverse_cot_ft, train::TrainMode::orpo_off,
             train::TrainMode::orpo_on,       train::TrainMode::orpo_mixed,
             train::TrainMode::orpo_teacher_neg};
  c.seeds = {1, 2, 3};
  c.base.mode = train::TrainMode::orpo_mixed;
  c.base.k = 8;
  c.base.lambda = 1.0;
  c.base.tau = 0.8;
  c.base.eta = 1e-3;
  c.base.epochs = 5;
  c.base.batch_size = 8;
  c.base.rouge_threshold = 0.80;
  c.base.max_gen_len = 56;
  c.eval_max_gen_len = 56;
  return c;
}

}  // namespace orpod::harness
