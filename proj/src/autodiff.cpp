#include "smamba/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "smamba/errors.hpp"

namespace smamba {

const Tensor& Gradients::of(Var v) const { return grads_.at(v.id()); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs,
                 BackwardFn backward) {
  Node node{std::string(op), std::move(value), {}, false, std::move(backward)};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) {
      throw ShapeMismatch("operand of '" + node.op + "' belongs to another tape");
    }
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (!node.requires_grad) node.backward = nullptr;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw ShapeMismatch("loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeMismatch("NonScalarLoss: loss has shape " +
                        to_string(loss.shape()));
  }
  const std::size_t n = loss.id() + 1;
  std::vector<Tensor> grads(n);
  std::vector<bool> has(n, false);
  grads[loss.id()] = Tensor::full(loss.shape(), 1.0);
  has[loss.id()] = true;

  std::vector<Tensor*> in_ptrs;
  for (std::size_t i = n; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!has[i] || !node.backward) continue;
    if (!grads[i].all_finite()) {
      throw NonFinite("NonFiniteGradient at node " + std::to_string(i) + " (" +
                      node.op + ")");
    }
    in_ptrs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t j = node.inputs[k];
      if (!nodes_[j].requires_grad) continue;
      if (!has[j]) {
        grads[j] = Tensor::zeros(nodes_[j].value.shape());
        has[j] = true;
      }
      in_ptrs[k] = &grads[j];
    }
    node.backward(grads[i], in_ptrs, node.value);
  }

  Gradients out;
  out.grads_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (i < n && has[i]) {
      if (!grads[i].all_finite()) {
        throw NonFinite("NonFiniteGradient at node " + std::to_string(i) +
                        " (" + nodes_[i].op + ")");
      }
      out.grads_[i] = std::move(grads[i]);
    } else {
      out.grads_[i] = Tensor::zeros(nodes_[i].value.shape());
    }
  }
  return out;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var loss = f(tape, leaf);
    analytic = tape.backward(loss).of(leaf);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape, tape.leaf(at, false)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(fd - analytic[i]) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace smamba
