#include "smamba/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include <json.hpp>

#include "smamba/errors.hpp"
#include "smamba/ops.hpp"
#include "smamba/random.hpp"

namespace smamba {
namespace {

// Distinct streams for initialization and data order from one seed.
constexpr std::uint64_t kOrderStream = 0x9E3779B97F4A7C15ull;

std::vector<std::vector<int>> tokenize_all(std::span<const std::string> smiles,
                                           const Vocabulary& vocab) {
  std::vector<std::vector<int>> out;
  out.reserve(smiles.size());
  for (const std::string& s : smiles) out.push_back(tokenize(s, vocab).ids());
  return out;
}

void check_vocab(const ModelParams& params, const Vocabulary& vocab) {
  if (params.config().vocab_size != vocab.size()) {
    throw ConfigError("model vocab_size " + std::to_string(params.config().vocab_size) +
                      " does not match the vocabulary (" + std::to_string(vocab.size()) +
                      " tokens)");
  }
}

std::map<std::string, Tensor> collect_grads(const Gradients& g, const BoundParams& bound) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, var] : bound.all()) {
    if (var.requires_grad()) grads.emplace(name, g.of(var));
  }
  return grads;
}

BatchOptions batch_options(const TrainConfig& cfg, bool shuffle, std::uint64_t seed) {
  return {cfg.batch_size, cfg.max_len, cfg.truncate, shuffle, seed};
}

double bce(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and non-negative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    fail("betas must lie in (0, 1)");
  }
  if (!(eps > 0.0)) fail("eps must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (max_steps == 0) fail("max_steps must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (!(clip_norm >= 0.0)) fail("clip_norm must be non-negative");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) fail("min_lr_ratio must lie in [0, 1]");
  if (max_len < 2) fail("max_len must be at least 2");
  if (!(target_loss >= 0.0)) fail("target_loss must be non-negative");
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.schedule == Schedule::kConstant) return cfg.lr;
  const double span = static_cast<double>(std::max<std::size_t>(1, total - std::min(total, cfg.warmup_steps)));
  const double progress =
      std::min(1.0, static_cast<double>(step - std::min(step, cfg.warmup_steps)) / span);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

std::string LogRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["split"] = split;
  j["loss"] = loss;
  j["metric"] = metric ? nlohmann::ordered_json(*metric) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

// ---- losses ------------------------------------------------------------

NextTokenBatch shift_for_next_token(const Batch& b) {
  if (b.len < 2) throw ValidationError("next-token batch needs at least two positions");
  NextTokenBatch out;
  out.batch = b.size;
  out.len = b.len - 1;
  out.inputs.reserve(b.size * out.len);
  for (std::size_t r = 0; r < b.size; ++r) {
    for (std::size_t t = 0; t < out.len; ++t) {
      out.inputs.push_back(b.ids[r * b.len + t]);
      out.targets.push_back(b.ids[r * b.len + t + 1]);
      out.mask.push_back(t + 1 < b.lengths[r] ? 1.0 : 0.0);
    }
  }
  return out;
}

Var cross_entropy_next_token(Var logits, std::span<const int> targets,
                             std::span<const double> mask) {
  const Shape& s = logits.shape();
  if (s.size() != 3 || targets.size() != s[0] * s[1] || mask.size() != targets.size()) {
    throw ShapeMismatch("cross_entropy_next_token: logits " + to_string(s) + " with " +
                        std::to_string(targets.size()) + " targets and " +
                        std::to_string(mask.size()) + " mask entries");
  }
  const std::size_t positions = targets.size(), vocab = s[2];
  double count = 0.0;
  for (std::size_t i = 0; i < positions; ++i) {
    if (mask[i] == 0.0) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab) {
      throw ValidationError("TokenOutOfRange: target " + std::to_string(targets[i]));
    }
    count += mask[i];
  }
  if (count == 0.0) throw ValidationError("cross_entropy_next_token: every position is masked");

  const Tensor& z = logits.value();
  // Saved softmax rows for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(positions * vocab, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < positions; ++i) {
    if (mask[i] == 0.0) continue;
    const double* row = z.data().data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double se = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) se += std::exp(row[v] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t v = 0; v < vocab; ++v) (*probs)[i * vocab + v] = std::exp(row[v] - lse);
    total += mask[i] * (lse - row[targets[i]]);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> msk(mask.begin(), mask.end());
  return logits.tape()->record(
      "cross_entropy_next_token", Tensor::scalar(total / count), {logits},
      [probs, tgt = std::move(tgt), msk = std::move(msk), count, vocab](
          const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
        if (!in[0]) return;
        const double scale = g.item() / count;
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          if (msk[i] == 0.0) continue;
          const double w = scale * msk[i];
          for (std::size_t v = 0; v < vocab; ++v) (*in[0])[i * vocab + v] += w * (*probs)[i * vocab + v];
          (*in[0])[i * vocab + static_cast<std::size_t>(tgt[i])] -= w;
        }
      });
}

Var task_loss(LabelKind kind, Var logits, std::span<const double> labels) {
  const std::size_t n = logits.value().size();
  if (labels.size() != n || n == 0) {
    throw ShapeMismatch("task_loss: " + std::to_string(n) + " outputs for " +
                        std::to_string(labels.size()) + " labels");
  }
  for (double y : labels) {
    if (!std::isfinite(y) || (kind == LabelKind::kBinary && y != 0.0 && y != 1.0)) {
      throw ValidationError("LabelOutOfDomain: " + std::to_string(y) + " for a " +
                            std::string(label_kind_name(kind)) + " head");
    }
  }
  const Tensor& z = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += kind == LabelKind::kBinary ? bce(z[i], labels[i])
                                        : (z[i] - labels[i]) * (z[i] - labels[i]);
  }
  std::vector<double> y(labels.begin(), labels.end());
  return logits.tape()->record(
      "task_loss", Tensor::scalar(total / static_cast<double>(n)), {logits},
      [kind, logits, y = std::move(y)](const Tensor& g, std::span<Tensor* const> in,
                                       const Tensor&) {
        if (!in[0]) return;
        const Tensor& zv = logits.value();
        const double scale = g.item() / static_cast<double>(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
          const double d = kind == LabelKind::kBinary ? sigmoid_value(zv[i]) - y[i]
                                                      : 2.0 * (zv[i] - y[i]);
          (*in[0])[i] += scale * d;
        }
      });
}

// ---- task head ---------------------------------------------------------

void attach_head(ModelParams& params, std::uint64_t seed) {
  const std::size_t dm = params.config().d_model;
  Tensor w = Tensor::zeros({dm, 1});
  Rng rng(seed ^ 0xC2B2AE3D27D4EB4Full);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dm));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  if (has_head(params)) {
    params.at(kHeadWeight) = std::move(w);
    params.at(kHeadBias) = Tensor::zeros({1});
  } else {
    params.insert(kHeadWeight, std::move(w));
    params.insert(kHeadBias, Tensor::zeros({1}));
  }
}

bool has_head(const ModelParams& params) {
  return params.contains(kHeadWeight) && params.contains(kHeadBias);
}

Var head_logits(const BoundParams& params, Var pooled) {
  const std::size_t batch = pooled.shape()[0];
  return reshape(add(matmul(pooled, params[kHeadWeight]), params[kHeadBias]), {batch});
}

// ---- optimizer ---------------------------------------------------------

void adamw_step(Tensor& param, const Tensor& grad, AdamWState& state, const TrainConfig& cfg,
                std::size_t step, double lr, bool decay) {
  if (grad.shape() != param.shape()) {
    throw ShapeMismatch("adamw_step: gradient " + to_string(grad.shape()) + " for parameter " +
                        to_string(param.shape()));
  }
  if (step == 0) throw ConfigError("adamw_step: step numbers start at 1");
  if (state.m.shape() != param.shape()) {
    state.m = Tensor::zeros(param.shape());
    state.v = Tensor::zeros(param.shape());
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double shrink = decay ? 1.0 - lr * cfg.weight_decay : 1.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = m;
    state.v[i] = v;
    param[i] = param[i] * shrink - lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
  }
}

bool decays(const std::string& name, const Tensor& value) {
  return value.rank() >= 2 && !name.ends_with("A_log");
}

void AdamW::step(ModelParams& params, const std::map<std::string, Tensor>& grads, double lr) {
  ++step_;
  for (const auto& [name, grad] : grads) {
    Tensor& p = params.at(name);
    adamw_step(p, grad, state_[name], cfg_, step_, lr, decays(name, p));
  }
}

double global_norm(const std::map<std::string, Tensor>& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) ss += v * v;
  return std::sqrt(ss);
}

double clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& v : g.data()) v *= scale;
  }
  return norm;
}

// ---- pretraining -------------------------------------------------------

LmEval evaluate_lm(const ModelParams& params, std::span<const std::vector<int>> sequences,
                   std::size_t batch_size, ScanMode scan) {
  BatchOptions opts;
  opts.batch_size = batch_size;
  opts.max_len = std::numeric_limits<std::size_t>::max();
  opts.shuffle = false;
  double loss = 0.0, correct = 0.0, tokens = 0.0;
  for (const Batch& b : make_batches(sequences, {}, opts)) {
    const NextTokenBatch nt = shift_for_next_token(b);
    Tape tape;
    BoundParams bound(tape, params, false);
    const Tensor z = forward(bound, params.config(), nt.inputs, nt.batch, nt.len, nullptr, {scan}).value();
    const std::size_t vocab = params.config().vocab_size;
    for (std::size_t i = 0; i < nt.targets.size(); ++i) {
      if (nt.mask[i] == 0.0) continue;
      const double* row = z.data().data() + i * vocab;
      const double* best = std::max_element(row, row + vocab);
      double se = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) se += std::exp(row[v] - *best);
      loss += *best + std::log(se) - row[nt.targets[i]];
      correct += static_cast<int>(best - row) == nt.targets[i];
      tokens += 1.0;
    }
  }
  if (tokens == 0.0) throw ValidationError("evaluate_lm: no target tokens");
  return {loss / tokens, correct / tokens, static_cast<std::size_t>(tokens)};
}

PretrainResult pretrain(std::span<const std::string> corpus, const Vocabulary& vocab,
                        const ModelConfig& model, const TrainConfig& cfg, const LogSink& sink) {
  cfg.validate();
  model.validate();
  if (corpus.empty()) throw ValidationError("EmptyCorpus: nothing to pretrain on");
  PretrainResult result{ModelParams::initialize(model, cfg.seed), {}, 0, 0.0, std::nullopt};
  check_vocab(result.params, vocab);
  const auto sequences = tokenize_all(corpus, vocab);

  auto emit = [&](LogRecord r) {
    if (sink) sink(r);
    result.log.push_back(std::move(r));
  };
  AdamW opt(cfg);
  Rng order(cfg.seed ^ kOrderStream);
  bool done = false;
  while (!done) {
    for (const Batch& b : make_batches(sequences, {}, batch_options(cfg, true, order.next()))) {
      const std::size_t step = result.steps + 1;
      const NextTokenBatch nt = shift_for_next_token(b);
      double value = 0.0;
      try {
        Tape tape;
        BoundParams bound(tape, result.params, true);
        const Var logits = forward(bound, model, nt.inputs, nt.batch, nt.len, nullptr, {cfg.scan});
        const Var loss = cross_entropy_next_token(logits, nt.targets, nt.mask);
        value = loss.value().item();
        if (!std::isfinite(value)) throw NonFinite("loss is " + std::to_string(value));
        auto grads = collect_grads(tape.backward(loss), bound);
        clip_grad_norm(grads, cfg.clip_norm);
        opt.step(result.params, grads, learning_rate(cfg, step, cfg.max_steps));
      } catch (const NonFinite& e) {
        throw NonFinite("NonFiniteLoss at step " + std::to_string(step) + ": " + e.what());
      }
      result.steps = step;
      result.last_train_loss = value;
      emit({step, "train", value, std::nullopt});

      const bool last = step == cfg.max_steps;
      if (cfg.eval_every > 0 && (step % cfg.eval_every == 0 || last)) {
        const LmEval ev = evaluate_lm(result.params, sequences, cfg.batch_size, cfg.scan);
        result.last_eval_loss = ev.loss;
        emit({step, "eval", ev.loss, ev.accuracy});
        if (cfg.target_loss > 0.0 && ev.loss < cfg.target_loss) done = true;
      }
      if (last) done = true;
      if (done) break;
    }
  }
  return result;
}

// ---- fine-tuning -------------------------------------------------------

namespace {

// Raw head outputs for `sequences`, in order.
std::vector<double> head_outputs(const ModelParams& params,
                                 std::span<const std::vector<int>> sequences,
                                 const TrainConfig& cfg) {
  BatchOptions opts = batch_options(cfg, false, 0);
  std::vector<double> out(sequences.size());
  for (const Batch& b : make_batches(sequences, {}, opts)) {
    Tape tape;
    BoundParams bound(tape, params, false);
    const Var hidden = forward_hidden(bound, params.config(), b.ids, b.size, b.len, nullptr, {cfg.scan});
    const Tensor z = head_logits(bound, pool_final(hidden, b.lengths)).value();
    for (std::size_t r = 0; r < b.size; ++r) out[b.items[r]] = z[r];
  }
  return out;
}

double to_prediction(const TaskHead& head, double z) {
  return head.kind == LabelKind::kBinary ? sigmoid_value(z) : z * head.label_std + head.label_mean;
}

double to_training_label(const TaskHead& head, double y) {
  return head.kind == LabelKind::kBinary ? y : (y - head.label_mean) / head.label_std;
}

struct Scored {
  double loss = 0.0;
  std::optional<double> metric;
  std::size_t n = 0;
};

Scored score_split(const ModelParams& params, const TaskHead& head,
                   const std::vector<std::vector<int>>& seqs, const std::vector<double>& labels,
                   const TrainConfig& cfg, Metric metric) {
  const std::vector<double> z = head_outputs(params, seqs, cfg);
  Scored s;
  s.n = z.size();
  std::vector<double> preds(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double y = to_training_label(head, labels[i]);
    s.loss += head.kind == LabelKind::kBinary ? bce(z[i], y) : (z[i] - y) * (z[i] - y);
    preds[i] = to_prediction(head, z[i]);
  }
  s.loss /= static_cast<double>(z.size());
  try {
    s.metric = compute_metric(metric, preds, labels);
  } catch (const ValidationError&) {
    s.metric.reset();  // e.g. a single-class validation split
  }
  return s;
}

}  // namespace

FinetuneResult finetune(const ModelParams& base, const std::optional<TaskHead>& base_head,
                        const Vocabulary& vocab, const TaskDataset& data,
                        const SplitAssignment& split, const TrainConfig& cfg, Metric metric,
                        const LogSink& sink) {
  cfg.validate();
  check_vocab(base, vocab);
  const bool binary_metric = needs_binary_labels(metric);
  if (binary_metric != (data.kind == LabelKind::kBinary)) {
    throw ConfigError("HeadMismatch: metric " + std::string(metric_name(metric)) +
                      " does not fit " + std::string(label_kind_name(data.kind)) + " labels");
  }
  if (base_head && base_head->kind != data.kind) {
    throw ConfigError("HeadMismatch: checkpoint head is " +
                      std::string(label_kind_name(base_head->kind)) + ", dataset labels are " +
                      std::string(label_kind_name(data.kind)));
  }
  if (split.of_record.size() != data.records.size()) {
    throw ShapeMismatch("split covers " + std::to_string(split.of_record.size()) +
                        " records, dataset has " + std::to_string(data.records.size()));
  }

  struct Part {
    std::vector<std::vector<int>> seqs;
    std::vector<double> labels;
  };
  std::array<Part, 3> parts;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    Part& p = parts[static_cast<std::size_t>(split.of_record[i])];
    p.seqs.push_back(tokenize(data.records[i].smiles, vocab).ids());
    p.labels.push_back(data.records[i].label);
  }
  for (std::size_t s = 0; s < 3; ++s) {
    if (parts[s].seqs.empty()) {
      throw ValidationError("EmptySplit: the " + std::string(split_name(static_cast<Split>(s))) +
                            " split has no records");
    }
  }
  const Part& train = parts[0];

  FinetuneResult result;
  result.head.kind = data.kind;
  if (data.kind == LabelKind::kContinuous) {
    const double n = static_cast<double>(train.labels.size());
    double mean = 0.0, ss = 0.0;
    for (double y : train.labels) mean += y;
    mean /= n;
    for (double y : train.labels) ss += (y - mean) * (y - mean);
    const double sd = std::sqrt(ss / n);
    result.head.label_mean = mean;
    result.head.label_std = sd > 0.0 ? sd : 1.0;
  }
  std::vector<double> train_targets;
  for (double y : train.labels) train_targets.push_back(to_training_label(result.head, y));

  ModelParams params = base;
  attach_head(params, cfg.seed);

  auto emit = [&](LogRecord r) {
    if (sink) sink(r);
    result.log.push_back(std::move(r));
  };
  const std::size_t per_epoch = (train.seqs.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  AdamW opt(cfg);
  Rng order(cfg.seed ^ kOrderStream);
  std::size_t step = 0;
  std::optional<double> best_score;
  ModelParams best = params;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    const auto batches = make_batches(train.seqs, train_targets, batch_options(cfg, true, order.next()));
    for (const Batch& b : batches) {
      ++step;
      double value = 0.0;
      try {
        Tape tape;
        BoundParams bound(tape, params, !cfg.freeze_backbone);
        if (cfg.freeze_backbone) {
          bound.set(kHeadWeight, tape.leaf(params.at(kHeadWeight), true));
          bound.set(kHeadBias, tape.leaf(params.at(kHeadBias), true));
        }
        const Var hidden = forward_hidden(bound, params.config(), b.ids, b.size, b.len, nullptr, {cfg.scan});
        const Var loss = task_loss(data.kind, head_logits(bound, pool_final(hidden, b.lengths)), b.labels);
        value = loss.value().item();
        if (!std::isfinite(value)) throw NonFinite("loss is " + std::to_string(value));
        auto grads = collect_grads(tape.backward(loss), bound);
        clip_grad_norm(grads, cfg.clip_norm);
        opt.step(params, grads, learning_rate(cfg, step, total));
      } catch (const NonFinite& e) {
        throw NonFinite("NonFiniteLoss at step " + std::to_string(step) + ": " + e.what());
      }
      epoch_loss += value * static_cast<double>(b.size);
    }
    emit({step, "train", epoch_loss / static_cast<double>(train.seqs.size()), std::nullopt});

    const Scored valid = score_split(params, result.head, parts[1].seqs, parts[1].labels, cfg, metric);
    emit({step, "valid", valid.loss, valid.metric});
    // Higher is better after orienting; fall back to the loss when the
    // metric is undefined on this split.
    const double score = valid.metric ? (higher_is_better(metric) ? *valid.metric : -*valid.metric)
                                      : -valid.loss;
    if (!best_score || score > *best_score) {
      best_score = score;
      best = params;
      result.best_epoch = epoch;
      result.valid = {data.name, metric, valid.metric.value_or(std::nan("")), valid.n, cfg.seed};
    }
  }

  result.params = std::move(best);
  const Scored test = score_split(result.params, result.head, parts[2].seqs, parts[2].labels, cfg, metric);
  if (!test.metric) {
    throw ValidationError("metric " + std::string(metric_name(metric)) +
                          " is undefined on the test split (single class or constant labels)");
  }
  emit({step, "test", test.loss, test.metric});
  result.test = {data.name, metric, *test.metric, test.n, cfg.seed};
  return result;
}

std::vector<double> predict(const ModelParams& params, const TaskHead& head,
                            const Vocabulary& vocab, std::span<const Record> records,
                            const TrainConfig& cfg) {
  check_vocab(params, vocab);
  if (!has_head(params)) throw ConfigError("HeadMismatch: checkpoint has no task head");
  std::vector<std::vector<int>> seqs;
  for (const Record& r : records) seqs.push_back(tokenize(r.smiles, vocab).ids());
  std::vector<double> out = head_outputs(params, seqs, cfg);
  for (double& v : out) v = to_prediction(head, v);
  return out;
}

}  // namespace smamba
