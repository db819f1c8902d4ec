#pragma once

#include <cstddef>
#include <optional>

#include "smamba/autodiff.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

// Discrete transition and input matrices, both [batch, len, d_inner, d_state].
struct Discretized {
  Tensor a_bar;
  Tensor b_bar;
};

// Zero-order hold for the (diagonal) state matrix and an Euler step for the
// input matrix:
//   a_bar[b,t,d,n] = exp(delta[b,t,d] * A[d,n])
//   b_bar[b,t,d,n] = delta[b,t,d] * B[b,t,n]
// Throws NonFinite if any entry overflows.
Discretized discretize(const Tensor& delta, const Tensor& A, const Tensor& B);

// Inputs of a selective scan.
//   u, delta: [batch, len, d_inner]
//   A:        [d_inner, d_state]
//   B, C:     [batch, len, d_state]
//   D:        [d_inner]
struct ScanInputs {
  const Tensor& u;
  const Tensor& delta;
  const Tensor& A;
  const Tensor& B;
  const Tensor& C;
  const Tensor& D;
};

struct ScanResult {
  Tensor y;       // [batch, len, d_inner]
  Tensor states;  // [batch, len, d_inner, d_state], h_t after step t
};

enum class ScanMode { kSequential, kParallel };

// h_t = a_bar_t * h_{t-1} + b_bar_t * u_t,  y_t = <C_t, h_t> + D * u_t,
// evaluated left to right. `h0` ([batch, d_inner, d_state]) defaults to zero.
ScanResult selective_scan_sequential(const ScanInputs& in, const Tensor* h0 = nullptr);

// Same recurrence evaluated as an inclusive associative scan over affine
// maps h -> a*h + b. Chains are split across `threads` workers (0 = use the
// hardware concurrency).
ScanResult selective_scan_parallel(const ScanInputs& in, const Tensor* h0 = nullptr,
                                   unsigned threads = 0);

// One affine map h -> a*h + b.
struct Affine {
  double a = 1.0;
  double b = 0.0;

  double apply(double h) const { return a * h + b; }
};

// Composition "first `first`, then `second`".
constexpr Affine compose(Affine first, Affine second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

// Differentiable scan recorded on the tape. Gradients flow to every operand;
// `h0` is a constant.
Var selective_scan(Var u, Var delta, Var A, Var B, Var C, Var D, ScanMode mode,
                   const Tensor* h0 = nullptr, Tensor* final_state = nullptr);

}  // namespace smamba
