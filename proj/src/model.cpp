#include "smamba/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "smamba/errors.hpp"
#include "smamba/ops.hpp"
#include "smamba/random.hpp"

namespace smamba {
namespace {

struct LayerShapes {
  std::vector<std::pair<std::string, Shape>> leaves;
};

LayerShapes layer_shapes(const ModelConfig& c) {
  const std::size_t di = c.d_inner(), r = c.resolved_dt_rank();
  return {{
      {"norm", {c.d_model}},
      {"in_proj", {c.d_model, 2 * di}},
      {"conv_weight", {di, c.d_conv}},
      {"conv_bias", {di}},
      {"x_proj", {di, r + 2 * c.d_state}},
      {"dt_proj", {r, di}},
      {"dt_bias", {di}},
      {"A_log", {di, c.d_state}},
      {"D", {di}},
      {"out_proj", {di, c.d_model}},
  }};
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(d_state, "d_state");
  positive(d_conv, "d_conv");
  positive(expand, "expand");
  if (vocab_size < 5) throw ConfigError("model config: vocab_size must be at least 5");
  if (!(dt_min > 0) || !(dt_max >= dt_min)) {
    throw ConfigError("model config: need 0 < dt_min <= dt_max");
  }
  if (!(norm_eps >= 0)) throw ConfigError("model config: norm_eps must be non-negative");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t dm = c.d_model, di = c.d_inner(), r = c.resolved_dt_rank(), n = c.d_state;
  const std::size_t per_layer = dm                 // norm
                                + dm * 2 * di      // in_proj
                                + di * c.d_conv    // conv weight
                                + di               // conv bias
                                + di * (r + 2 * n) // x_proj
                                + r * di + di      // dt_proj + bias
                                + di * n           // A_log
                                + di               // D
                                + di * dm;         // out_proj
  return c.vocab_size * dm + c.n_layers * per_layer + dm;
}

ModelParams::ModelParams(const ModelConfig& cfg) : config_(cfg) {
  cfg.validate();
  insert("embedding", Tensor::zeros({cfg.vocab_size, cfg.d_model}));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (const auto& [leaf, shape] : layer_shapes(cfg).leaves) {
      insert(layer_name(l, leaf), Tensor::zeros(shape));
    }
  }
  insert("final_norm", Tensor::zeros({cfg.d_model}));
}

ModelParams ModelParams::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  Rng rng(seed);
  // Small enough that the tied head starts close to uniform: the self logit
  // after the final norm is about std * d_model.
  for (double& v : p.at("embedding").data()) v = 0.01 * rng.normal();
  const std::size_t di = cfg.d_inner(), r = cfg.resolved_dt_rank();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto name = [l](const char* leaf) { return layer_name(l, leaf); };
    std::fill(p.at(name("norm")).data().begin(), p.at(name("norm")).data().end(), 1.0);
    fill_uniform(p.at(name("in_proj")), rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    const double conv_bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_conv));
    fill_uniform(p.at(name("conv_weight")), rng, conv_bound);
    fill_uniform(p.at(name("conv_bias")), rng, conv_bound);
    fill_uniform(p.at(name("x_proj")), rng, 1.0 / std::sqrt(static_cast<double>(di)));
    fill_uniform(p.at(name("dt_proj")), rng, 1.0 / std::sqrt(static_cast<double>(r)));
    Tensor& dt_bias = p.at(name("dt_bias"));
    for (double& v : dt_bias.data()) {
      const double dt = std::max(
          1e-4, std::exp(rng.uniform(std::log(cfg.dt_min), std::log(cfg.dt_max))));
      v = dt + std::log(-std::expm1(-dt));  // softplus^-1(dt)
    }
    Tensor& a_log = p.at(name("A_log"));
    for (std::size_t i = 0; i < di; ++i)
      for (std::size_t n = 0; n < cfg.d_state; ++n)
        a_log[i * cfg.d_state + n] = std::log(static_cast<double>(n + 1));
    std::fill(p.at(name("D")).data().begin(), p.at(name("D")).data().end(), 1.0);
    fill_uniform(p.at(name("out_proj")), rng, 1.0 / std::sqrt(static_cast<double>(di)));
  }
  std::fill(p.at("final_norm").data().begin(), p.at("final_norm").data().end(), 1.0);
  return p;
}

std::string ModelParams::layer_name(std::size_t layer, const std::string& leaf) {
  return "layers." + std::to_string(layer) + "." + leaf;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return values_[it->second];
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return values_[it->second];
}

void ModelParams::insert(const std::string& name, Tensor value) {
  if (auto it = index_.find(name); it != index_.end()) {
    values_[it->second] = std::move(value);
    return;
  }
  index_.emplace(name, names_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

BoundParams::BoundParams(Tape& tape, const ModelParams& params, bool requires_grad) {
  for (const std::string& name : params.names()) {
    index_.emplace(name, vars_.size());
    vars_.emplace_back(name, tape.leaf(params.at(name), requires_grad));
  }
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no bound parameter named '" + name + "'");
  return vars_[it->second].second;
}

void BoundParams::set(const std::string& name, Var value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no bound parameter named '" + name + "'");
  vars_[it->second].second = value;
}

HiddenState HiddenState::zeros(const ModelConfig& cfg, std::size_t batch) {
  HiddenState s;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerState ls;
    ls.ssm = Tensor::zeros({batch, cfg.d_inner(), cfg.d_state});
    if (cfg.d_conv > 1) ls.conv = Tensor::zeros({batch, cfg.d_conv - 1, cfg.d_inner()});
    s.layers.push_back(std::move(ls));
  }
  return s;
}

namespace {

Var block_body(Var x, const BoundParams& p, std::size_t layer, const ModelConfig& cfg,
               LayerState* state, const BlockOptions& opts) {
  auto w = [&](const char* leaf) { return p[ModelParams::layer_name(layer, leaf)]; };
  const std::size_t di = cfg.d_inner(), r = cfg.resolved_dt_rank(), ns = cfg.d_state;
  if (x.shape().size() != 3 || x.shape()[2] != cfg.d_model) {
    throw ShapeMismatch("block input must be [batch,len,d_model], got " + to_string(x.shape()));
  }
  const std::size_t batch = x.shape()[0], len = x.shape()[1];

  Var normed = rmsnorm(x, w("norm"), cfg.norm_eps);
  Var xz = matmul(normed, w("in_proj"));
  Var main = slice_last(xz, 0, di);
  Var gate = slice_last(xz, di, 2 * di);

  const Tensor* conv_history = state && cfg.d_conv > 1 ? &state->conv : nullptr;
  Var conv = add(causal_depthwise_conv1d(main, w("conv_weight"), conv_history), w("conv_bias"));
  Var u = silu(conv);

  Var sel = matmul(u, w("x_proj"));
  Var dt_low = slice_last(sel, 0, r);
  Var b_sel = slice_last(sel, r, r + ns);
  Var c_sel = slice_last(sel, r + ns, r + 2 * ns);
  Var delta = softplus(add(matmul(dt_low, w("dt_proj")), w("dt_bias")));
  Var a = neg(exp(w("A_log")));

  Tensor final_ssm;
  Var y = selective_scan(u, delta, a, b_sel, c_sel, w("D"), opts.scan,
                         state ? &state->ssm : nullptr, state ? &final_ssm : nullptr);
  Var out = matmul(mul(y, silu(gate)), w("out_proj"));
  Var result = add(x, out);
  result.value().check_finite("block output");

  if (state) {
    state->ssm = std::move(final_ssm);
    if (cfg.d_conv > 1) {
      // Keep the last d_conv - 1 inputs of the convolution.
      const std::size_t keep = cfg.d_conv - 1;
      Tensor next = Tensor::zeros({batch, keep, di});
      const Tensor& mv = main.value();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < keep; ++k) {
          // Position in the concatenation [history, main] of length keep + len.
          const std::size_t pos = len + k;
          for (std::size_t c = 0; c < di; ++c) {
            next[(b * keep + k) * di + c] =
                pos < keep ? state->conv[(b * keep + pos) * di + c]
                           : mv[(b * len + pos - keep) * di + c];
          }
        }
      state->conv = std::move(next);
    }
  }
  return result;
}

}  // namespace

Var mamba_block(Var x, const BoundParams& p, std::size_t layer, const ModelConfig& cfg,
                LayerState* state, const BlockOptions& opts) {
  try {
    return block_body(x, p, layer, cfg, state, opts);
  } catch (const NonFinite& e) {
    throw NonFinite("non-finite activation in layer " + std::to_string(layer) + ": " + e.what());
  }
}

Var forward_hidden(const BoundParams& params, const ModelConfig& cfg, std::span<const int> ids,
                   std::size_t batch, std::size_t len, HiddenState* state,
                   const BlockOptions& opts) {
  if (ids.size() != batch * len) {
    throw ShapeMismatch("expected " + std::to_string(batch * len) + " token ids, got " +
                        std::to_string(ids.size()));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw ValidationError("TokenOutOfRange: id " + std::to_string(id) +
                            " not below vocab_size " + std::to_string(cfg.vocab_size));
    }
  }
  if (state && state->layers.size() != cfg.n_layers) {
    throw ShapeMismatch("hidden state has " + std::to_string(state->layers.size()) +
                        " layers, model has " + std::to_string(cfg.n_layers));
  }
  Var x = gather_rows(params["embedding"], ids, {batch, len});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = mamba_block(x, params, l, cfg, state ? &state->layers[l] : nullptr, opts);
  }
  return rmsnorm(x, params["final_norm"], cfg.norm_eps);
}

Var lm_head(const BoundParams& params, Var hidden) {
  return matmul(hidden, transpose(params["embedding"]));
}

Var forward(const BoundParams& params, const ModelConfig& cfg, std::span<const int> ids,
            std::size_t batch, std::size_t len, HiddenState* state, const BlockOptions& opts) {
  return lm_head(params, forward_hidden(params, cfg, ids, batch, len, state, opts));
}

Var pool_final(Var hidden, std::span<const std::size_t> lengths) {
  const Shape& s = hidden.shape();
  if (s.size() != 3 || lengths.size() != s[0]) {
    throw ShapeMismatch("pool_final expects hidden[batch,len,width] and one length per row, got " +
                        to_string(s) + " with " + std::to_string(lengths.size()) + " lengths");
  }
  const std::size_t batch = s[0], len = s[1], width = s[2];
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (lengths[b] < 1 || lengths[b] > len) {
      throw ValidationError("LengthOutOfRange: length " + std::to_string(lengths[b]) +
                            " for a sequence of " + std::to_string(len) + " positions");
    }
    rows[b] = b * len + lengths[b] - 1;
  }
  Tensor out = Tensor::zeros({batch, width});
  const Tensor& hv = hidden.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < width; ++j) out[b * width + j] = hv[rows[b] * width + j];
  return hidden.tape()->record(
      "pool_final", std::move(out), {hidden},
      [rows, width](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
        if (!in[0]) return;
        for (std::size_t b = 0; b < rows.size(); ++b)
          for (std::size_t j = 0; j < width; ++j) (*in[0])[rows[b] * width + j] += g[b * width + j];
      });
}

}  // namespace smamba
