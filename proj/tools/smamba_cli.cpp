// smamba: command-line driver for vocabulary building, pretraining, scaffold
// splitting, fine-tuning and evaluation.
//
// Exit codes: 0 ok, 2 I/O, 3 parse or validation, 4 numeric failure,
// 5 configuration mismatch.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "smamba/checkpoint.hpp"
#include "smamba/config.hpp"
#include "smamba/data.hpp"
#include "smamba/errors.hpp"
#include "smamba/metrics.hpp"
#include "smamba/molecule.hpp"
#include "smamba/smiles.hpp"
#include "smamba/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace smamba;

namespace {

constexpr const char* kVersion = "smamba 0.1.0";

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo: return 2;
    case ErrorKind::kParse: return 3;
    case ErrorKind::kNumeric: return 4;
    case ErrorKind::kConfig: return 5;
  }
  return 1;
}

// One line per command appended to <run dir>/manifest.jsonl.
class Manifest {
 public:
  Manifest(std::string command, const fs::path& primary_output)
      : command_(std::move(command)),
        dir_(primary_output.has_parent_path() ? primary_output.parent_path() : fs::path(".")),
        start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_[p.string()] = file_digest(p); }
  void output(const fs::path& p) { outputs_[p.string()] = file_digest(p); }
  void config(const RunConfig& cfg) {
    config_ = {{"model", to_json(cfg.model)}, {"train", to_json(cfg.train)}};
  }
  void seeds(std::vector<std::uint64_t> s) { seeds_ = std::move(s); }

  void write() const {
    std::string joined;
    for (const auto& [path, digest] : outputs_.items()) joined += digest.get<std::string>();
    char artifact[17];
    std::snprintf(artifact, sizeof artifact, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(joined)));
    ordered_json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seeds"] = seeds_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    j["version"] = kVersion;
    j["artifact_version"] = artifact;
    std::ofstream out(dir_ / "manifest.jsonl", std::ios::app);
    if (!out) throw IoError("cannot append to " + (dir_ / "manifest.jsonl").string());
    out << j.dump() << "\n";
  }

 private:
  std::string command_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  ordered_json config_ = nullptr;
  std::vector<std::uint64_t> seeds_;
  ordered_json inputs_ = ordered_json::object();
  ordered_json outputs_ = ordered_json::object();
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void append_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

fs::path log_path_for(const fs::path& ckpt) { return fs::path(ckpt.string() + ".log.jsonl"); }

// out.ckpt -> out-seed3.ckpt
fs::path seeded_path(const fs::path& out, std::uint64_t seed) {
  return out.parent_path() / (out.stem().string() + "-seed" + std::to_string(seed) + out.extension().string());
}

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--set", sets, "override one config key (key=value), repeatable");
    app->add_option("--seed", seed, "seed for every random choice of the command");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) cfg = load_run_config(config_file);
    for (const std::string& s : sets) apply_assignment(cfg, s);
    if (seed) cfg.train.seed = *seed;
    return cfg;
  }
};

struct TaskFlags {
  std::string csv;
  std::string label_kind;
  std::string task;
  std::string smiles_col = "Drug";
  std::string label_col = "Y";

  void add_to(CLI::App* app) {
    app->add_option("--task-csv", csv, "task CSV with a header row")->required();
    app->add_option("--label-kind", label_kind, "binary or continuous");
    app->add_option("--task", task, "registry task name (sets label kind, metric and name)");
    app->add_option("--smiles-col", smiles_col, "SMILES column name");
    app->add_option("--label-col", label_col, "label column name");
  }

  const TaskInfo* info() const {
    if (task.empty()) return nullptr;
    const TaskInfo* t = find_task(task);
    if (!t) throw ConfigError("unknown task '" + task + "'");
    return t;
  }

  TaskDataset load(std::optional<LabelKind> fallback = std::nullopt) const {
    const TaskInfo* t = info();
    std::optional<LabelKind> kind = fallback;
    if (t) kind = t->kind;
    if (!label_kind.empty()) kind = parse_label_kind(label_kind);
    if (!kind) throw ValidationError("--label-kind or --task is required");
    TaskDataset d = load_task_csv(csv, *kind, {smiles_col, label_col});
    if (t) {
      d.name = t->name;
      d.expected_size = t->expected_size;
    }
    for (const Exclusion& e : d.excluded) {
      std::cerr << "excluded row " << e.row << ": " << e.reason << "\n";
    }
    return d;
  }

  Metric metric(const std::string& flag, LabelKind kind) const {
    if (!flag.empty()) return parse_metric(flag);
    if (const TaskInfo* t = info()) return t->metric;
    return kind == LabelKind::kBinary ? Metric::kRocAuc : Metric::kMae;
  }
};

// ---- commands ----------------------------------------------------------

int cmd_build_vocab(const std::string& corpus_path, const std::string& out) {
  const Corpus corpus = load_corpus(corpus_path);
  for (const BadLine& b : corpus.skipped) {
    std::cerr << "skipped line " << b.line << ": " << b.message << "\n";
  }
  const Vocabulary vocab = build_vocab(corpus.smiles);
  vocab.save(out);
  Manifest m("build-vocab", out);
  m.input(corpus_path);
  m.output(out);
  m.write();
  std::cout << "vocabulary: " << vocab.size() << " tokens from " << corpus.smiles.size()
            << " molecules -> " << out << "\n";
  return 0;
}

int cmd_pretrain(const std::string& corpus_path, const std::string& vocab_path,
                 const ConfigFlags& flags, const std::string& out, std::string log) {
  const Vocabulary vocab = Vocabulary::load(vocab_path);
  RunConfig cfg = flags.resolve();
  cfg.model.vocab_size = vocab.size();
  const Corpus corpus = load_corpus(corpus_path);
  if (!corpus.skipped.empty()) {
    std::cerr << corpus.skipped.size() << " corpus lines skipped\n";
  }
  if (log.empty()) log = log_path_for(out).string();

  std::string log_text;
  PretrainResult r = pretrain(corpus.smiles, vocab, cfg.model, cfg.train,
                              [&](const LogRecord& rec) { log_text += rec.to_json() + "\n"; });

  Checkpoint ckpt{std::move(r.params), vocab, std::nullopt, ordered_json::object()};
  ckpt.metadata["stage"] = "pretrain";
  ckpt.metadata["seed"] = cfg.train.seed;
  ckpt.metadata["steps"] = r.steps;
  ckpt.metadata["final_train_loss"] = r.last_train_loss;
  ckpt.metadata["train_config"] = to_json(cfg.train);
  ckpt.metadata["corpus_digest"] = file_digest(corpus_path);
  save_checkpoint(ckpt, out);
  write_text(log, log_text);

  Manifest m("pretrain", out);
  m.config(cfg);
  m.seeds({cfg.train.seed});
  m.input(corpus_path);
  m.input(vocab_path);
  if (!flags.config_file.empty()) m.input(flags.config_file);
  m.output(out);
  m.output(log);
  m.write();
  std::cout << "pretrained " << r.steps << " steps, final train loss " << r.last_train_loss;
  if (r.last_eval_loss) std::cout << ", eval loss " << *r.last_eval_loss;
  std::cout << " -> " << out << "\n";
  return 0;
}

int cmd_split(const TaskFlags& task, std::uint64_t seed, const std::string& out) {
  const TaskDataset data = task.load();
  const SplitAssignment s = scaffold_split(data, {0.7, 0.1, 0.2}, seed);
  write_split_file(out, data, s);
  if (s.warning) std::cerr << "warning: " << *s.warning << "\n";
  Manifest m("split", out);
  m.seeds({seed});
  m.input(task.csv);
  m.output(out);
  m.write();
  std::printf("split %zu records: train %.4f valid %.4f test %.4f (largest scaffold group %zu) -> %s\n",
              data.records.size(), s.realized[0], s.realized[1], s.realized[2], s.largest_group,
              out.c_str());
  return 0;
}

int cmd_finetune(const std::string& base_path, const TaskFlags& task, const std::string& split_path,
                 const ConfigFlags& flags, const std::string& metric_flag, std::size_t n_seeds,
                 const std::string& out, const std::string& report_path) {
  const Checkpoint base = load_checkpoint(base_path);
  const TaskDataset data = task.load(base.head ? std::optional(base.head->kind) : std::nullopt);
  const Metric metric = task.metric(metric_flag, data.kind);
  const RunConfig cfg = flags.resolve();
  if (n_seeds == 0) throw ValidationError("--seeds must be at least 1");

  Manifest m("finetune", out);
  m.config(cfg);
  m.input(base_path);
  m.input(task.csv);
  if (!split_path.empty()) m.input(split_path);
  if (!flags.config_file.empty()) m.input(flags.config_file);

  std::vector<MetricReport> valid, test;
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < n_seeds; ++k) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + k;
    seeds.push_back(tc.seed);
    const SplitAssignment split = split_path.empty() ? scaffold_split(data, {0.7, 0.1, 0.2}, tc.seed)
                                                     : read_split_file(split_path, data);
    std::string log_text;
    FinetuneResult r = finetune(base.params, base.head, base.vocab, data, split, tc, metric,
                                [&](const LogRecord& rec) { log_text += rec.to_json() + "\n"; });
    const fs::path ckpt_path = n_seeds == 1 ? fs::path(out) : seeded_path(out, tc.seed);
    Checkpoint ckpt{std::move(r.params), base.vocab, r.head, ordered_json::object()};
    ckpt.metadata["stage"] = "finetune";
    ckpt.metadata["dataset"] = data.name;
    ckpt.metadata["seed"] = tc.seed;
    ckpt.metadata["best_epoch"] = r.best_epoch;
    ckpt.metadata["metric"] = std::string(metric_name(metric));
    ckpt.metadata["valid"] = r.valid.value;
    ckpt.metadata["test"] = r.test.value;
    ckpt.metadata["train_config"] = to_json(tc);
    save_checkpoint(ckpt, ckpt_path);
    write_text(log_path_for(ckpt_path), log_text);
    m.output(ckpt_path);
    m.output(log_path_for(ckpt_path));

    const std::string line = report_line(r.test);
    std::cout << line << "\n";
    if (!report_path.empty()) append_text(report_path, line + "\n");
    valid.push_back(r.valid);
    test.push_back(r.test);
  }
  if (n_seeds > 1) {
    const Aggregate agg = aggregate(test);
    std::cout << data.name << " " << metric_name(metric) << " test " << agg.render() << " over "
              << agg.runs << " seeds\n";
    // The validation metric can be undefined on a single-class split; only
    // aggregate it when every run has one.
    if (std::all_of(valid.begin(), valid.end(), [](const MetricReport& r) { return std::isfinite(r.value); })) {
      std::cout << data.name << " " << metric_name(metric) << " valid "
                << aggregate(valid).render() << " over " << valid.size() << " seeds\n";
    }
  }
  if (!report_path.empty()) m.output(report_path);
  m.seeds(seeds);
  m.write();
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const TaskFlags& task, const std::string& split_path,
                 const std::string& metric_flag, const std::string& on) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.head) throw ConfigError("HeadMismatch: " + ckpt_path + " has no task head");
  const TaskDataset data = task.load(ckpt.head->kind);
  if (data.kind != ckpt.head->kind) {
    throw ConfigError("HeadMismatch: checkpoint head is " + std::string(label_kind_name(ckpt.head->kind)) +
                      ", dataset labels are " + std::string(label_kind_name(data.kind)));
  }
  const Metric metric = task.metric(metric_flag, data.kind);
  if (needs_binary_labels(metric) != (ckpt.head->kind == LabelKind::kBinary)) {
    throw ConfigError("HeadMismatch: metric " + std::string(metric_name(metric)) + " does not fit a " +
                      std::string(label_kind_name(ckpt.head->kind)) + " head");
  }
  std::vector<Record> records;
  if (split_path.empty() || on == "all") {
    records = data.records;
  } else {
    const SplitAssignment split = read_split_file(split_path, data);
    Split want;
    if (on == "train") want = Split::kTrain;
    else if (on == "valid") want = Split::kValid;
    else if (on == "test") want = Split::kTest;
    else throw ValidationError("--on must be train, valid, test or all");
    for (std::size_t i : split.indices(want)) records.push_back(data.records[i]);
  }
  if (records.empty()) throw ValidationError("EmptySplit: nothing to evaluate");
  TrainConfig tc;
  if (ckpt.metadata.contains("train_config")) {
    tc.batch_size = ckpt.metadata["train_config"].value("batch_size", tc.batch_size);
    tc.max_len = ckpt.metadata["train_config"].value("max_len", tc.max_len);
    tc.truncate = ckpt.metadata["train_config"].value("truncate", tc.truncate);
  }
  const std::vector<double> preds = predict(ckpt.params, *ckpt.head, ckpt.vocab, records, tc);
  std::vector<double> labels;
  for (const Record& r : records) labels.push_back(r.label);
  MetricReport rep{data.name, metric, compute_metric(metric, preds, labels), records.size(),
                   ckpt.metadata.value("seed", std::uint64_t{0})};
  std::cout << report_line(rep) << "\n";
  return 0;
}

int cmd_tokenize(const std::string& smiles, const std::string& vocab_path) {
  const std::vector<Token> tokens = lex_smiles(smiles);
  std::optional<Vocabulary> vocab;
  if (!vocab_path.empty()) vocab = Vocabulary::load(vocab_path);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) std::cout << ' ';
    std::cout << tokens[i].text;
  }
  std::cout << "\n";
  if (vocab) {
    const std::vector<int> ids = tokenize(smiles, *vocab).ids();
    for (std::size_t i = 0; i < ids.size(); ++i) std::cout << (i ? " " : "") << ids[i];
    std::cout << "\n";
  }
  return 0;
}

int cmd_scaffold(const std::string& smiles) {
  const ScaffoldKey k = murcko_scaffold(smiles);
  std::cout << (k.is_acyclic ? "(acyclic)" : k.key) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective state-space language model for SMILES and ADMET fine-tuning"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string corpus, vocab, out, log, split_path, metric_flag, base, ckpt, smiles, report;
  std::string on = "test";
  std::uint64_t seed = 0;
  std::size_t n_seeds = 1;
  ConfigFlags cfg_flags;
  TaskFlags task;

  auto* bv = app.add_subcommand("build-vocab", "build a token vocabulary from a SMILES corpus");
  bv->add_option("--corpus", corpus)->required();
  bv->add_option("--out", out)->required();

  auto* pt = app.add_subcommand("pretrain", "next-token pretraining on a SMILES corpus");
  pt->add_option("--corpus", corpus)->required();
  pt->add_option("--vocab", vocab)->required();
  pt->add_option("--out", out, "checkpoint path")->required();
  pt->add_option("--log", log, "training log (default <out>.log.jsonl)");
  cfg_flags.add_to(pt);

  auto* sp = app.add_subcommand("split", "scaffold split of a task CSV");
  task.add_to(sp);
  sp->add_option("--seed", seed);
  sp->add_option("--out", out)->required();

  auto* ft = app.add_subcommand("finetune", "fine-tune a pretrained checkpoint on a task");
  ft->add_option("--base-ckpt", base)->required();
  task.add_to(ft);
  ft->add_option("--split", split_path, "split file (default: scaffold split with the run seed)");
  ft->add_option("--metric", metric_flag);
  ft->add_option("--seeds", n_seeds, "number of runs with seeds seed, seed+1, ...");
  ft->add_option("--out", out, "checkpoint path")->required();
  ft->add_option("--report", report, "append report lines here");
  cfg_flags.add_to(ft);

  auto* ev = app.add_subcommand("evaluate", "score a fine-tuned checkpoint");
  ev->add_option("--ckpt", ckpt)->required();
  task.add_to(ev);
  ev->add_option("--split", split_path);
  ev->add_option("--on", on, "train, valid, test or all");
  ev->add_option("--metric", metric_flag);

  auto* tk = app.add_subcommand("tokenize", "print the tokens of a SMILES string");
  tk->add_option("--smiles", smiles)->required();
  tk->add_option("--vocab", vocab, "also print ids under this vocabulary");

  auto* sc = app.add_subcommand("scaffold", "print the Murcko scaffold key of a SMILES string");
  sc->add_option("--smiles", smiles)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  try {
    if (*bv) return cmd_build_vocab(corpus, out);
    if (*pt) return cmd_pretrain(corpus, vocab, cfg_flags, out, log);
    if (*sp) return cmd_split(task, seed, out);
    if (*ft) return cmd_finetune(base, task, split_path, cfg_flags, metric_flag, n_seeds, out, report);
    if (*ev) return cmd_evaluate(ckpt, task, split_path, metric_flag, on);
    if (*tk) return cmd_tokenize(smiles, vocab);
    if (*sc) return cmd_scaffold(smiles);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
