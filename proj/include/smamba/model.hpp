#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "smamba/autodiff.hpp"
#include "smamba/ssm.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  std::size_t dt_rank = 0;  // 0 selects ceil(d_model / 16)
  double dt_min = 1e-3;
  double dt_max = 1e-1;
  double norm_eps = 1e-5;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
  // Throws ConfigError when a field is out of range.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Closed-form number of scalars in the parameter set for `cfg`.
std::size_t parameter_count(const ModelConfig& cfg);

// Named parameter arrays in a fixed order. Weight matrices are stored
// [in, out] and applied as x * W.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);  // zero-filled

  // Mamba-style initialization: uniform fan-in scaling for projections,
  // A = -[1..d_state] per channel, D = 1, unit norm gains and a step bias
  // whose softplus lands in [dt_min, dt_max].
  static ModelParams initialize(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t scalar_count() const;

  // Adds an extra named array (task heads).
  void insert(const std::string& name, Tensor value);

  static std::string layer_name(std::size_t layer, const std::string& leaf);

 private:
  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

// Parameters placed on a tape as leaves.
class BoundParams {
 public:
  BoundParams(Tape& tape, const ModelParams& params, bool requires_grad);

  Var operator[](const std::string& name) const;
  // Replaces one binding, e.g. with a variable under a gradient check.
  void set(const std::string& name, Var value);
  const std::vector<std::pair<std::string, Var>>& all() const noexcept { return vars_; }

 private:
  std::vector<std::pair<std::string, Var>> vars_;
  std::map<std::string, std::size_t> index_;
};

// Per-layer recurrent state carried across chunks of a sequence.
struct LayerState {
  Tensor ssm;   // [batch, d_inner, d_state]
  Tensor conv;  // [batch, d_conv - 1, d_inner]; unused when d_conv == 1
};

struct HiddenState {
  std::vector<LayerState> layers;

  static HiddenState zeros(const ModelConfig& cfg, std::size_t batch);
};

struct BlockOptions {
  ScanMode scan = ScanMode::kSequential;
};

// One residual block:
//   x + out_proj( scan(conv-silu(in_main), dt, B, C) * silu(gate) )
// with the projections taken from rmsnorm(x). When `state` is given the
// convolution and scan continue from it and it is updated in place.
Var mamba_block(Var x, const BoundParams& params, std::size_t layer, const ModelConfig& cfg,
                LayerState* state = nullptr, const BlockOptions& opts = {});

// Token ids [batch, len] (row-major) to final normalized hidden states
// [batch, len, d_model]. Throws ValidationError (TokenOutOfRange) for ids
// outside the vocabulary.
Var forward_hidden(const BoundParams& params, const ModelConfig& cfg, std::span<const int> ids,
                   std::size_t batch, std::size_t len, HiddenState* state = nullptr,
                   const BlockOptions& opts = {});

// Next-token logits [batch, len, vocab_size] through the tied embedding.
Var forward(const BoundParams& params, const ModelConfig& cfg, std::span<const int> ids,
            std::size_t batch, std::size_t len, HiddenState* state = nullptr,
            const BlockOptions& opts = {});
Var lm_head(const BoundParams& params, Var hidden);

// hidden[b, lengths[b] - 1, :] for each row. Throws ValidationError
// (LengthOutOfRange) unless 1 <= lengths[b] <= len.
Var pool_final(Var hidden, std::span<const std::size_t> lengths);

}  // namespace smamba
