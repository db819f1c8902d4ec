#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smamba/tensor.hpp"

namespace smamba {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the upstream gradient of a node and accumulates into the
// gradients of its inputs. Entries of `input_grads` are null for inputs that
// do not require gradients. `output` is the node's own forward value.
using BackwardFn = std::function<void(const Tensor& grad, std::span<Tensor* const> input_grads,
                                      const Tensor& output)>;

class Gradients {
 public:
  // Gradient with respect to `v`. Nodes the loss does not depend on get a
  // zero tensor of the right shape.
  const Tensor& of(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

// Append-only record of a computation. Nodes are stored in creation order,
// which is a topological order, so the backward pass walks it in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs,
             BackwardFn backward);

  // Reverse sweep from a scalar loss. Throws ShapeMismatch for a non-scalar
  // loss and NonFinite naming the first node whose gradient is not finite.
  Gradients backward(Var loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// Max over coordinates of |central difference - analytic| / (|analytic| + 1e-8),
// where the analytic gradient comes from Tape::backward. `f` must build a
// scalar on the given tape from the leaf it is handed.
using ScalarFn = std::function<Var(Tape&, Var)>;
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace smamba
