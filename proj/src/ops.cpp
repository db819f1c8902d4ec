#include "smamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <cblas.h>

#include "smamba/errors.hpp"

namespace smamba {
namespace {

// Strides of `in` laid over the dimensions of `out`; broadcast dims get 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t src = in.size() - 1 - k;
    const std::size_t dst = out.size() - 1 - k;
    strides[dst] = in[src] == 1 ? 0 : stride;
    stride *= in[src];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb,
                        F&& f) {
  const std::size_t n = numel(out);
  if (sa == out && sb == out) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const auto stride_a = broadcast_strides(sa, out);
  const auto stride_b = broadcast_strides(sb, out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += stride_a[d];
      ib += stride_b[d];
      if (idx[d] < out[d]) break;
      ia -= stride_a[d] * out[d];
      ib -= stride_b[d] * out[d];
      idx[d] = 0;
    }
  }
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out = s;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

void check_axis(const Var& a, std::size_t axis, const char* op) {
  if (axis >= a.shape().size()) {
    throw ShapeMismatch(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for shape " + to_string(a.shape()));
  }
}

// outer x n x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.n = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

}  // namespace

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu_value(double x) { return x * sigmoid_value(x); }

double softplus_value(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

Var elementwise(Elementwise op, Var a, std::optional<Var> b) {
  Tape& tape = *a.tape();
  const bool binary = op == Elementwise::kAdd || op == Elementwise::kMul;
  if (binary) {
    if (!b) throw ShapeMismatch("binary elementwise op needs two operands");
    const Shape& sa = a.shape();
    const Shape& sb = b->shape();
    Shape out_shape = broadcast_shapes(sa, sb);
    Tensor out = Tensor::zeros(out_shape);
    const auto& av = a.value();
    const auto& bv = b->value();
    if (op == Elementwise::kAdd) {
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = av[ia] + bv[ib];
      });
    } else {
      for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = av[ia] * bv[ib];
      });
    }
    Var bb = *b;
    return tape.record(op == Elementwise::kAdd ? "add" : "mul", std::move(out), {a, bb},
                       [op, a, bb, out_shape](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                         const auto& av = a.value();
                         const auto& bv = bb.value();
                         Tensor* ga = in[0];
                         Tensor* gb = in[1];
                         for_each_broadcast(out_shape, a.shape(), bb.shape(),
                                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                              if (op == Elementwise::kAdd) {
                                                if (ga) (*ga)[ia] += g[i];
                                                if (gb) (*gb)[ib] += g[i];
                                              } else {
                                                if (ga) (*ga)[ia] += g[i] * bv[ib];
                                                if (gb) (*gb)[ib] += g[i] * av[ia];
                                              }
                                            });
                       });
  }

  const Tensor& x = a.value();
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.size();
  const char* name = "";
  switch (op) {
    case Elementwise::kExp:
      name = "exp";
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
      break;
    case Elementwise::kSilu:
      name = "silu";
      for (std::size_t i = 0; i < n; ++i) out[i] = silu_value(x[i]);
      break;
    case Elementwise::kSigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < n; ++i) out[i] = sigmoid_value(x[i]);
      break;
    case Elementwise::kSoftplus:
      name = "softplus";
      for (std::size_t i = 0; i < n; ++i) out[i] = softplus_value(x[i]);
      break;
    case Elementwise::kNeg:
      name = "neg";
      for (std::size_t i = 0; i < n; ++i) out[i] = -x[i];
      break;
    case Elementwise::kRecip:
      name = "recip";
      for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / x[i];
      break;
    default:
      break;
  }
  return tape.record(
      name, std::move(out), {a},
      [op, a](const Tensor& g, std::span<Tensor* const> in, const Tensor& y) {
        Tensor* ga = in[0];
        if (!ga) return;
        const Tensor& x = a.value();
        const std::size_t n = x.size();
        switch (op) {
          case Elementwise::kExp:
            for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * y[i];
            break;
          case Elementwise::kSilu:
            for (std::size_t i = 0; i < n; ++i) {
              const double s = sigmoid_value(x[i]);
              (*ga)[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
            }
            break;
          case Elementwise::kSigmoid:
            for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * y[i] * (1.0 - y[i]);
            break;
          case Elementwise::kSoftplus:
            for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * sigmoid_value(x[i]);
            break;
          case Elementwise::kNeg:
            for (std::size_t i = 0; i < n; ++i) (*ga)[i] -= g[i];
            break;
          case Elementwise::kRecip:
            for (std::size_t i = 0; i < n; ++i) (*ga)[i] -= g[i] * y[i] * y[i];
            break;
          default:
            break;
        }
      });
}

Var sub(Var a, Var b) { return add(a, neg(b)); }

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape()->record("scale", std::move(out), {a},
                          [factor](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * factor;
                          });
}

namespace {

// C[m,n] += op(A) op(B), row-major, op(A) [m,kk] and op(B) [kk,n].
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t kk, const double* a,
          const double* b, double* c) {
  if (m == 0 || n == 0 || kk == 0) return;
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(kk), 1.0, a,
              static_cast<blasint>(ta ? m : kk), b, static_cast<blasint>(tb ? kk : n), 1.0, c,
              static_cast<blasint>(n));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeMismatch("matmul needs rank >= 2, got " + to_string(sa) + " and " +
                        to_string(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) {
    throw ShapeMismatch("matmul inner dimensions differ: " + to_string(sa) + " x " +
                        to_string(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  Shape batch = broadcast_shapes(batch_a, batch_b);
  const std::size_t nb = numel(batch);

  // Matrix offsets (in matrices) for each broadcast batch entry.
  std::vector<std::size_t> off_a(nb), off_b(nb);
  for_each_broadcast(batch, batch_a, batch_b, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    off_a[i] = ia;
    off_b[i] = ib;
  });

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);
  const auto A = a.value().data();
  const auto B = b.value().data();
  for (std::size_t bi = 0; bi < nb; ++bi) {
    gemm(false, false, m, n, k, A.data() + off_a[bi] * m * k, B.data() + off_b[bi] * k * n,
         out.data().data() + bi * m * n);
  }
  return a.tape()->record(
      "matmul", std::move(out), {a, b},
      [a, b, off_a, off_b, m, k, n](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
        const auto A = a.value().data();
        const auto B = b.value().data();
        for (std::size_t bi = 0; bi < off_a.size(); ++bi) {
          const double* pa = A.data() + off_a[bi] * m * k;
          const double* pb = B.data() + off_b[bi] * k * n;
          const double* pg = g.data().data() + bi * m * n;
          // dA += G B^T,  dB += A^T G
          if (in[0]) gemm(false, true, m, k, n, pg, pb, in[0]->data().data() + off_a[bi] * m * k);
          if (in[1]) gemm(true, false, k, n, m, pa, pg, in[1]->data().data() + off_b[bi] * k * n);
        }
      });
}

Var transpose(Var a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeMismatch("transpose needs rank >= 2, got " + to_string(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s.back();
  const std::size_t nb = numel(s) / (r * c);
  Shape os = s;
  std::swap(os[os.size() - 2], os.back());
  Tensor out = Tensor::zeros(os);
  const Tensor& x = a.value();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  return a.tape()->record("transpose", std::move(out), {a},
                          [r, c, nb](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                            if (!in[0]) return;
                            for (std::size_t b = 0; b < nb; ++b)
                              for (std::size_t i = 0; i < r; ++i)
                                for (std::size_t j = 0; j < c; ++j)
                                  (*in[0])[b * r * c + i * c + j] += g[b * r * c + j * r + i];
                          });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record("reshape", std::move(out), {a},
                          [](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                          });
}

Var slice_last(Var a, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (s.empty() || begin >= end || end > s.back()) {
    throw ShapeMismatch("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") invalid for shape " + to_string(s));
  }
  const std::size_t width = s.back();
  const std::size_t w = end - begin;
  const std::size_t rows = numel(s) / width;
  Shape os = s;
  os.back() = w;
  Tensor out = Tensor::zeros(os);
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * width + begin), w,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * w));
  return a.tape()->record("slice", std::move(out), {a},
                          [rows, width, begin, w](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                            if (!in[0]) return;
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < w; ++j)
                                (*in[0])[r * width + begin + j] += g[r * w + j];
                          });
}

Var sum(Var a, std::size_t axis) {
  check_axis(a, axis, "sum");
  const AxisSplit sp = split_at(a.shape(), axis);
  Tensor out = Tensor::zeros(drop_axis(a.shape(), axis));
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += x[(o * sp.n + j) * sp.inner + i];
  return a.tape()->record("sum", std::move(out), {a},
                          [sp](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                            if (!in[0]) return;
                            for (std::size_t o = 0; o < sp.outer; ++o)
                              for (std::size_t j = 0; j < sp.n; ++j)
                                for (std::size_t i = 0; i < sp.inner; ++i)
                                  (*in[0])[(o * sp.n + j) * sp.inner + i] += g[o * sp.inner + i];
                          });
}

Var mean(Var a, std::size_t axis) {
  check_axis(a, axis, "mean");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape()->record("sum_all", Tensor::scalar(s), {a},
                          [](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
                            if (!in[0]) return;
                            const double gv = g[0];
                            for (double& v : in[0]->data()) v += gv;
                          });
}

Var mean_all(Var a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var softmax(Var a, std::size_t axis) {
  check_axis(a, axis, "softmax");
  const AxisSplit sp = split_at(a.shape(), axis);
  const Tensor& x = a.value();
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
      double mx = x[at(0)];
      for (std::size_t j = 1; j < sp.n; ++j) mx = std::max(mx, x[at(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        out[at(j)] = std::exp(x[at(j)] - mx);
        z += out[at(j)];
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[at(j)] /= z;
    }
  }
  return a.tape()->record(
      "softmax", std::move(out), {a}, [sp](const Tensor& g, std::span<Tensor* const> in, const Tensor& yv) {
        if (!in[0]) return;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t i = 0; i < sp.inner; ++i) {
            auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
            double dot = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) dot += g[at(j)] * yv[at(j)];
            for (std::size_t j = 0; j < sp.n; ++j) (*in[0])[at(j)] += yv[at(j)] * (g[at(j)] - dot);
          }
        }
      });
}

Var rmsnorm(Var x, Var gain, double eps) {
  const Shape& s = x.shape();
  if (s.empty() || gain.shape() != Shape{s.back()}) {
    throw ShapeMismatch("rmsnorm gain " + to_string(gain.shape()) + " does not match input " +
                        to_string(s));
  }
  const std::size_t width = s.back();
  const std::size_t rows = numel(s) / width;
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  Tensor out = Tensor::zeros(s);
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < width; ++j) ms += xv[r * width + j] * xv[r * width + j];
    ms /= static_cast<double>(width);
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < width; ++j)
      out[r * width + j] = xv[r * width + j] * inv_rms[r] * gv[j];
  }
  return x.tape()->record(
      "rmsnorm", std::move(out), {x, gain},
      [x, gain, inv_rms = std::move(inv_rms), rows, width](const Tensor& g,
                                                           std::span<Tensor* const> in, const Tensor&) {
        const Tensor& xv = x.value();
        const Tensor& gv = gain.value();
        for (std::size_t r = 0; r < rows; ++r) {
          const double ir = inv_rms[r];
          double dot = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            const double xhat = xv[r * width + j] * ir;
            if (in[1]) (*in[1])[j] += g[r * width + j] * xhat;
            dot += g[r * width + j] * gv[j] * xhat;
          }
          if (!in[0]) continue;
          dot /= static_cast<double>(width);
          for (std::size_t j = 0; j < width; ++j) {
            const double xhat = xv[r * width + j] * ir;
            (*in[0])[r * width + j] += ir * (g[r * width + j] * gv[j] - xhat * dot);
          }
        }
      });
}

Var causal_depthwise_conv1d(Var x, Var kernel, const Tensor* history) {
  const Shape& s = x.shape();
  const Shape& ks = kernel.shape();
  if (s.size() != 3 || ks.size() != 2 || ks[0] != s[2]) {
    throw ShapeMismatch("conv1d expects x[batch,len,channels] and kernel[channels,width], got " +
                        to_string(s) + " and " + to_string(ks));
  }
  const std::size_t nb = s[0], len = s[1], ch = s[2], width = ks[1];
  if (history && width > 1 && history->shape() != Shape{nb, width - 1, ch}) {
    throw ShapeMismatch("conv1d history " + to_string(history->shape()) + " expected " +
                        to_string(Shape{nb, width - 1, ch}));
  }
  const Tensor& xv = x.value();
  const Tensor& kv = kernel.value();
  // Reads input at time t (may be negative: history or zero padding).
  auto input_at = [&xv, history, nb, len, ch, width](std::size_t b, std::ptrdiff_t t,
                                                     std::size_t c) -> double {
    if (t >= 0) return xv[(b * len + static_cast<std::size_t>(t)) * ch + c];
    if (!history || width < 2) return 0.0;
    const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(width - 1) + t;
    return (*history)[(b * (width - 1) + static_cast<std::size_t>(h)) * ch + c];
  };
  Tensor out = Tensor::zeros(s);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          const std::ptrdiff_t src =
              static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(width - 1);
          acc += kv[c * width + j] * input_at(b, src, c);
        }
        out[(b * len + t) * ch + c] = acc;
      }
  std::optional<Tensor> hist;
  if (history) hist = *history;
  return x.tape()->record(
      "conv1d", std::move(out), {x, kernel},
      [x, kernel, hist, nb, len, ch, width](const Tensor& g, std::span<Tensor* const> in, const Tensor&) {
        const Tensor& xv = x.value();
        const Tensor& kv = kernel.value();
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t c = 0; c < ch; ++c) {
              const double gv = g[(b * len + t) * ch + c];
              for (std::size_t j = 0; j < width; ++j) {
                const std::ptrdiff_t src =
                    static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(width - 1);
                if (src >= 0) {
                  const std::size_t xi = (b * len + static_cast<std::size_t>(src)) * ch + c;
                  if (in[0]) (*in[0])[xi] += gv * kv[c * width + j];
                  if (in[1]) (*in[1])[c * width + j] += gv * xv[xi];
                } else if (in[1] && hist && width > 1) {
                  const std::size_t h =
                      static_cast<std::size_t>(static_cast<std::ptrdiff_t>(width - 1) + src);
                  (*in[1])[c * width + j] += gv * (*hist)[(b * (width - 1) + h) * ch + c];
                }
              }
            }
      });
}

Var gather_rows(Var table, std::span<const int> ids, const Shape& index_shape) {
  const Shape& ts = table.shape();
  if (ts.size() != 2) throw ShapeMismatch("gather_rows needs a 2-D table, got " + to_string(ts));
  if (numel(index_shape) != ids.size()) {
    throw ShapeMismatch("gather_rows index shape " + to_string(index_shape) +
                        " does not match " + std::to_string(ids.size()) + " ids");
  }
  const std::size_t rows = ts[0], width = ts[1];
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw ValidationError("row index " + std::to_string(ids[i]) + " out of range [0," +
                            std::to_string(rows) + ")");
    }
  }
  Shape os = index_shape;
  os.push_back(width);
  Tensor out = Tensor::zeros(os);
  const Tensor& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape()->record("gather_rows", std::move(out), {table},
                              [idv = std::move(idv), width](const Tensor& g,
                                                            std::span<Tensor* const> in, const Tensor&) {
                                if (!in[0]) return;
                                for (std::size_t i = 0; i < idv.size(); ++i)
                                  for (std::size_t j = 0; j < width; ++j)
                                    (*in[0])[static_cast<std::size_t>(idv[i]) * width + j] +=
                                        g[i * width + j];
                              });
}

}  // namespace smamba
