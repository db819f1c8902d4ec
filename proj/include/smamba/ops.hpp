#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "smamba/autodiff.hpp"

namespace smamba {

enum class Elementwise { kAdd, kMul, kExp, kSilu, kSigmoid, kSoftplus, kNeg, kRecip };

// Binary ops (add, mul) broadcast; unary ops ignore `b`.
Var elementwise(Elementwise op, Var a, std::optional<Var> b = std::nullopt);

inline Var add(Var a, Var b) { return elementwise(Elementwise::kAdd, a, b); }
inline Var mul(Var a, Var b) { return elementwise(Elementwise::kMul, a, b); }
inline Var exp(Var a) { return elementwise(Elementwise::kExp, a); }
inline Var silu(Var a) { return elementwise(Elementwise::kSilu, a); }
inline Var sigmoid(Var a) { return elementwise(Elementwise::kSigmoid, a); }
inline Var softplus(Var a) { return elementwise(Elementwise::kSoftplus, a); }
inline Var neg(Var a) { return elementwise(Elementwise::kNeg, a); }
inline Var recip(Var a) { return elementwise(Elementwise::kRecip, a); }
Var sub(Var a, Var b);
Var scale(Var a, double factor);

// Scalar helpers shared with code that works on raw tensors.
double silu_value(double x);
double sigmoid_value(double x);
double softplus_value(double x);

// a[..., m, k] x b[..., k, n] -> [..., m, n], batch dims broadcast.
Var matmul(Var a, Var b);
// Swaps the two innermost dimensions.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
// Columns [begin, end) of the innermost dimension.
Var slice_last(Var a, std::size_t begin, std::size_t end);

Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);

Var softmax(Var a, std::size_t axis);
// Normalizes the innermost dimension by its root mean square, then scales
// by `gain` (shape [last dim]).
Var rmsnorm(Var x, Var gain, double eps);

// x[batch, len, channels] convolved per channel with kernel[channels, width]
// over a causal window: out[t] = sum_j kernel[c, j] * x[t - (width-1) + j].
// Positions before the start read from `history` ([batch, width-1, channels],
// treated as a constant) or zero when absent.
Var causal_depthwise_conv1d(Var x, Var kernel,
                            const Tensor* history = nullptr);

// Rows of `table` [rows, width] picked by `ids`; result shape is
// `index_shape` + [width].
Var gather_rows(Var table, std::span<const int> ids, const Shape& index_shape);

}  // namespace smamba
