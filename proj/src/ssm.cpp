#include "smamba/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "smamba/errors.hpp"

namespace smamba {
namespace {

struct Dims {
  std::size_t batch = 0, len = 0, inner = 0, state = 0;
};

Dims check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B,
                       const Tensor& C, const Tensor& D) {
  if (u.rank() != 3) throw ShapeMismatch("scan input u must be [batch,len,d_inner], got " +
                                         to_string(u.shape()));
  Dims d{u.dim(0), u.dim(1), u.dim(2), A.rank() == 2 ? A.dim(1) : 0};
  auto expect = [](const Tensor& t, const Shape& s, const char* name) {
    if (t.shape() != s) {
      throw ShapeMismatch(std::string("scan operand ") + name + " has shape " +
                          to_string(t.shape()) + ", expected " + to_string(s));
    }
  };
  expect(delta, u.shape(), "delta");
  expect(A, {d.inner, d.state}, "A");
  expect(B, {d.batch, d.len, d.state}, "B");
  expect(C, {d.batch, d.len, d.state}, "C");
  expect(D, {d.inner}, "D");
  return d;
}

void check_h0(const Tensor* h0, const Dims& d) {
  if (h0 && h0->shape() != Shape{d.batch, d.inner, d.state}) {
    throw ShapeMismatch("initial state has shape " + to_string(h0->shape()) + ", expected " +
                        to_string(Shape{d.batch, d.inner, d.state}));
  }
}

// y_t = <C_t, h_t> + D * u_t from stored states; reports the first
// non-finite time index.
Tensor readout(const ScanInputs& in, const Tensor& states, const Dims& d) {
  Tensor y = Tensor::zeros({d.batch, d.len, d.inner});
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < d.len; ++t) {
      const std::size_t bt = b * d.len + t;
      for (std::size_t i = 0; i < d.inner; ++i) {
        const double* h = states.data().data() + (bt * d.inner + i) * d.state;
        double acc = 0.0;
        for (std::size_t n = 0; n < d.state; ++n) acc += in.C[bt * d.state + n] * h[n];
        const double v = acc + in.D[i] * in.u[bt * d.inner + i];
        if (!std::isfinite(v)) {
          throw NonFinite("selective scan produced a non-finite output at time index " +
                          std::to_string(t));
        }
        y[bt * d.inner + i] = v;
      }
    }
  }
  return y;
}

// Brent-Kung inclusive scan over `len` steps for chains [c0, c1). Element
// (t, c) lives at index t * chains + c.
void affine_scan(std::vector<double>& a, std::vector<double>& b, std::size_t len,
                 std::size_t chains, std::size_t c0, std::size_t c1) {
  auto combine = [&](std::size_t earlier, std::size_t later) {
    for (std::size_t c = c0; c < c1; ++c) {
      const Affine r = compose({a[earlier * chains + c], b[earlier * chains + c]},
                               {a[later * chains + c], b[later * chains + c]});
      a[later * chains + c] = r.a;
      b[later * chains + c] = r.b;
    }
  };
  std::size_t stride = 1;
  for (; stride * 2 <= len; stride *= 2) {
    for (std::size_t i = 2 * stride - 1; i < len; i += 2 * stride) combine(i - stride, i);
  }
  for (stride /= 2; stride >= 1; stride /= 2) {
    for (std::size_t i = 3 * stride - 1; i < len; i += 2 * stride) combine(i - stride, i);
  }
}

}  // namespace

Discretized discretize(const Tensor& delta, const Tensor& A, const Tensor& B) {
  if (delta.rank() != 3 || A.rank() != 2 || B.rank() != 3 || A.dim(0) != delta.dim(2) ||
      B.dim(0) != delta.dim(0) || B.dim(1) != delta.dim(1) || B.dim(2) != A.dim(1)) {
    throw ShapeMismatch("discretize: delta " + to_string(delta.shape()) + ", A " +
                        to_string(A.shape()) + ", B " + to_string(B.shape()));
  }
  const std::size_t nb = delta.dim(0), len = delta.dim(1), inner = delta.dim(2), ns = A.dim(1);
  Discretized out{Tensor::zeros({nb, len, inner, ns}), Tensor::zeros({nb, len, inner, ns})};
  for (std::size_t bt = 0; bt < nb * len; ++bt)
    for (std::size_t i = 0; i < inner; ++i) {
      const double dt = delta[bt * inner + i];
      for (std::size_t n = 0; n < ns; ++n) {
        const std::size_t k = (bt * inner + i) * ns + n;
        out.a_bar[k] = std::exp(dt * A[i * ns + n]);
        out.b_bar[k] = dt * B[bt * ns + n];
      }
    }
  out.a_bar.check_finite("discretized A");
  out.b_bar.check_finite("discretized B");
  return out;
}

ScanResult selective_scan_sequential(const ScanInputs& in, const Tensor* h0) {
  const Dims d = check_scan_shapes(in.u, in.delta, in.A, in.B, in.C, in.D);
  check_h0(h0, d);
  Tensor states = Tensor::zeros({d.batch, d.len, d.inner, d.state});
  std::vector<double> h(d.inner * d.state);
  for (std::size_t b = 0; b < d.batch; ++b) {
    if (h0) {
      std::copy_n(h0->data().begin() + static_cast<std::ptrdiff_t>(b * h.size()), h.size(),
                  h.begin());
    } else {
      std::fill(h.begin(), h.end(), 0.0);
    }
    for (std::size_t t = 0; t < d.len; ++t) {
      const std::size_t bt = b * d.len + t;
      for (std::size_t i = 0; i < d.inner; ++i) {
        const double dt = in.delta[bt * d.inner + i];
        const double ut = in.u[bt * d.inner + i];
        for (std::size_t n = 0; n < d.state; ++n) {
          double& hv = h[i * d.state + n];
          hv = std::exp(dt * in.A[i * d.state + n]) * hv + dt * in.B[bt * d.state + n] * ut;
          states[(bt * d.inner + i) * d.state + n] = hv;
        }
      }
    }
  }
  Tensor y = readout(in, states, d);
  return {std::move(y), std::move(states)};
}

ScanResult selective_scan_parallel(const ScanInputs& in, const Tensor* h0, unsigned threads) {
  const Dims d = check_scan_shapes(in.u, in.delta, in.A, in.B, in.C, in.D);
  check_h0(h0, d);
  const std::size_t chains = d.inner * d.state;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, chains));

  Tensor states = Tensor::zeros({d.batch, d.len, d.inner, d.state});
  std::vector<double> a(d.len * chains), bcoef(d.len * chains);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < d.len; ++t) {
      const std::size_t bt = b * d.len + t;
      for (std::size_t i = 0; i < d.inner; ++i) {
        const double dt = in.delta[bt * d.inner + i];
        const double ut = in.u[bt * d.inner + i];
        for (std::size_t n = 0; n < d.state; ++n) {
          const std::size_t k = t * chains + i * d.state + n;
          a[k] = std::exp(dt * in.A[i * d.state + n]);
          bcoef[k] = dt * in.B[bt * d.state + n] * ut;
        }
      }
    }
    // Fold the initial state into the first map so the scan result is h_t.
    if (h0) {
      for (std::size_t c = 0; c < chains; ++c) bcoef[c] += a[c] * (*h0)[b * chains + c];
    }
    if (threads <= 1) {
      affine_scan(a, bcoef, d.len, chains, 0, chains);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t per = (chains + threads - 1) / threads;
      for (std::size_t c0 = 0; c0 < chains; c0 += per) {
        pool.emplace_back(
            [&, c0] { affine_scan(a, bcoef, d.len, chains, c0, std::min(chains, c0 + per)); });
      }
    }
    std::copy(bcoef.begin(), bcoef.end(),
              states.data().begin() + static_cast<std::ptrdiff_t>(b * d.len * chains));
  }
  Tensor y = readout(in, states, d);
  return {std::move(y), std::move(states)};
}

Var selective_scan(Var u, Var delta, Var A, Var B, Var C, Var D, ScanMode mode, const Tensor* h0,
                   Tensor* final_state) {
  const ScanInputs in{u.value(), delta.value(), A.value(), B.value(), C.value(), D.value()};
  ScanResult r = mode == ScanMode::kSequential ? selective_scan_sequential(in, h0)
                                               : selective_scan_parallel(in, h0);
  const Dims d = check_scan_shapes(in.u, in.delta, in.A, in.B, in.C, in.D);
  const std::size_t chains = d.inner * d.state;
  if (final_state) {
    *final_state = Tensor::zeros({d.batch, d.inner, d.state});
    for (std::size_t b = 0; b < d.batch; ++b)
      std::copy_n(r.states.data().begin() +
                      static_cast<std::ptrdiff_t>((b * d.len + d.len - 1) * chains),
                  chains, final_state->data().begin() + static_cast<std::ptrdiff_t>(b * chains));
  }
  auto states = std::make_shared<const Tensor>(std::move(r.states));
  auto init = h0 ? std::make_shared<const Tensor>(*h0) : nullptr;
  return u.tape()->record(
      "selective_scan", std::move(r.y), {u, delta, A, B, C, D},
      [u, delta, A, B, C, D, states, init, d, chains](const Tensor& g,
                                                      std::span<Tensor* const> grads,
                                                      const Tensor&) {
        const Tensor& uv = u.value();
        const Tensor& dv = delta.value();
        const Tensor& av = A.value();
        const Tensor& bv = B.value();
        const Tensor& cv = C.value();
        const Tensor& skip = D.value();
        Tensor* gu = grads[0];
        Tensor* gdelta = grads[1];
        Tensor* gA = grads[2];
        Tensor* gB = grads[3];
        Tensor* gC = grads[4];
        Tensor* gD = grads[5];
        // carry[c] = a_{t+1} * dL/dh_{t+1} for chain c.
        std::vector<double> carry(chains);
        for (std::size_t b = 0; b < d.batch; ++b) {
          std::fill(carry.begin(), carry.end(), 0.0);
          for (std::size_t t = d.len; t-- > 0;) {
            const std::size_t bt = b * d.len + t;
            for (std::size_t i = 0; i < d.inner; ++i) {
              const double gy = g[bt * d.inner + i];
              const double dt = dv[bt * d.inner + i];
              const double ut = uv[bt * d.inner + i];
              if (gD) (*gD)[i] += gy * ut;
              double ddelta = 0.0;
              double du = gy * skip[i];
              for (std::size_t n = 0; n < d.state; ++n) {
                const std::size_t c = i * d.state + n;
                const double h = (*states)[bt * chains + c];
                double h_prev = 0.0;
                if (t > 0) {
                  h_prev = (*states)[(bt - 1) * chains + c];
                } else if (init) {
                  h_prev = (*init)[b * chains + c];
                }
                const double bn = bv[bt * d.state + n];
                if (gC) (*gC)[bt * d.state + n] += gy * h;
                const double gh = gy * cv[bt * d.state + n] + carry[c];
                const double an = av[c];
                const double abar = std::exp(dt * an);
                const double da = gh * h_prev;
                ddelta += da * abar * an + gh * bn * ut;
                if (gA) (*gA)[c] += da * abar * dt;
                if (gB) (*gB)[bt * d.state + n] += gh * dt * ut;
                du += gh * dt * bn;
                carry[c] = abar * gh;
              }
              if (gdelta) (*gdelta)[bt * d.inner + i] += ddelta;
              if (gu) (*gu)[bt * d.inner + i] += du;
            }
          }
        }
      });
}

}  // namespace smamba
