#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smamba/autodiff.hpp"
#include "smamba/data.hpp"
#include "smamba/metrics.hpp"
#include "smamba/model.hpp"
#include "smamba/smiles.hpp"

namespace smamba {

enum class Schedule { kConstant, kWarmupCosine };

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_steps = 1000;  // pretraining budget
  std::size_t epochs = 10;       // fine-tuning budget
  double clip_norm = 1.0;        // 0 disables clipping
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::kConstant;
  std::size_t warmup_steps = 0;
  double min_lr_ratio = 0.1;     // cosine floor as a fraction of lr
  std::size_t max_len = 256;
  bool truncate = false;
  std::size_t eval_every = 0;    // pretraining: full-corpus loss every N steps
  double target_loss = 0.0;      // pretraining: stop once the eval loss is below
  bool freeze_backbone = false;  // fine-tuning: train the head only
  ScanMode scan = ScanMode::kSequential;

  // Throws ConfigError. lr may be 0 (a no-op run), everything else that is a
  // size or a rate must be positive.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Learning rate for 1-based `step` out of `total` steps.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total);

struct LogRecord {
  std::size_t step = 0;
  std::string split;  // "train", "eval", "valid", "test"
  double loss = 0.0;
  std::optional<double> metric;
  // {"step":..,"split":..,"loss":..,"metric":..|null}
  std::string to_json() const;
};

using LogSink = std::function<void(const LogRecord&)>;

// ---- losses ------------------------------------------------------------

// Inputs are ids[:, :-1], targets ids[:, 1:], mask marks real targets.
struct NextTokenBatch {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<double> mask;
  std::size_t batch = 0;
  std::size_t len = 0;
};
NextTokenBatch shift_for_next_token(const Batch& b);

// Mean negative log-likelihood of `targets` under softmax(logits) over the
// positions with mask 1. logits [b, l, V], targets and mask [b, l].
Var cross_entropy_next_token(Var logits, std::span<const int> targets,
                             std::span<const double> mask);

// Binary: mean sigmoid cross-entropy on the logits. Continuous: mean squared
// error. logits has one entry per label. Throws ValidationError
// (LabelOutOfDomain) for non-finite labels or non-0/1 binary labels.
Var task_loss(LabelKind kind, Var logits, std::span<const double> labels);

// ---- task head ---------------------------------------------------------

// Linear read-out from the pooled final hidden state. Continuous labels are
// trained in standardized units; mean/std map them back.
struct TaskHead {
  LabelKind kind = LabelKind::kBinary;
  double label_mean = 0.0;
  double label_std = 1.0;
  bool operator==(const TaskHead&) const = default;
};

inline constexpr const char* kHeadWeight = "head.weight";  // [d_model, 1]
inline constexpr const char* kHeadBias = "head.bias";      // [1]

// Adds (or re-initializes) the head arrays.
void attach_head(ModelParams& params, std::uint64_t seed);
bool has_head(const ModelParams& params);
// [batch] head outputs for pooled [batch, d_model].
Var head_logits(const BoundParams& params, Var pooled);

// ---- optimizer ---------------------------------------------------------

struct AdamWState {
  Tensor m;
  Tensor v;
};

// One decoupled-weight-decay Adam update of `param` at 1-based `step`:
//   param *= 1 - lr * wd            (only when `decay`)
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2
//   param -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
void adamw_step(Tensor& param, const Tensor& grad, AdamWState& state, const TrainConfig& cfg,
                std::size_t step, double lr, bool decay);

// Weight decay applies to matrices except the state decay rates.
bool decays(const std::string& name, const Tensor& value);

class AdamW {
 public:
  explicit AdamW(TrainConfig cfg) : cfg_(std::move(cfg)) {}
  // Updates every parameter that has an entry in `grads`.
  void step(ModelParams& params, const std::map<std::string, Tensor>& grads, double lr);
  std::size_t steps() const noexcept { return step_; }

 private:
  TrainConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, AdamWState> state_;
};

// Global L2 norm over all gradients.
double global_norm(const std::map<std::string, Tensor>& grads);
// Rescales so the global norm is at most `max_norm`; returns the norm before.
double clip_grad_norm(std::map<std::string, Tensor>& grads, double max_norm);

// ---- pretraining -------------------------------------------------------

struct LmEval {
  double loss = 0.0;      // mean per-token cross-entropy
  double accuracy = 0.0;  // argmax next-token accuracy
  std::size_t tokens = 0;
};

LmEval evaluate_lm(const ModelParams& params, std::span<const std::vector<int>> sequences,
                   std::size_t batch_size, ScanMode scan = ScanMode::kSequential);

struct PretrainResult {
  ModelParams params;
  std::vector<LogRecord> log;
  std::size_t steps = 0;
  double last_train_loss = 0.0;
  std::optional<double> last_eval_loss;
};

// Next-token training on `corpus`. Throws NonFinite (NonFiniteLoss, with the
// step number).
PretrainResult pretrain(std::span<const std::string> corpus, const Vocabulary& vocab,
                        const ModelConfig& model, const TrainConfig& cfg,
                        const LogSink& sink = {});

// ---- fine-tuning -------------------------------------------------------

struct FinetuneResult {
  ModelParams params;
  TaskHead head;
  std::vector<LogRecord> log;
  std::size_t best_epoch = 0;
  MetricReport valid;
  MetricReport test;
};

// Fresh head on top of `base`, trained on the train split for cfg.epochs;
// the epoch with the best validation metric is kept and scored on test.
// Throws ValidationError (EmptySplit) and ConfigError (HeadMismatch) when
// the metric or an existing head does not fit the labels.
FinetuneResult finetune(const ModelParams& base, const std::optional<TaskHead>& base_head,
                        const Vocabulary& vocab, const TaskDataset& data,
                        const SplitAssignment& split, const TrainConfig& cfg, Metric metric,
                        const LogSink& sink = {});

// Probabilities for binary heads, label-scale values for continuous ones.
std::vector<double> predict(const ModelParams& params, const TaskHead& head,
                            const Vocabulary& vocab, std::span<const Record> records,
                            const TrainConfig& cfg);

}  // namespace smamba
