#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "smamba/autodiff.hpp"
#include "smamba/errors.hpp"
#include "smamba/ops.hpp"
#include "test_util.hpp"

namespace smamba {
namespace {

using testing::random_tensor;

Tensor eval(const Tensor& a, Var (*op)(Var)) {
  Tape tape;
  return op(tape.leaf(a)).value();
}

TEST(Elementwise, Examples) {
  Tape tape;
  Var a = tape.leaf(Tensor::vector({1, 2}));
  Var b = tape.leaf(Tensor::vector({3, 4}));
  EXPECT_EQ(add(a, b).value(), Tensor::vector({4, 6}));
  EXPECT_EQ(eval(Tensor::vector({0}), &exp), Tensor::vector({1}));
  EXPECT_EQ(eval(Tensor::vector({0}), &silu), Tensor::vector({0}));
}

TEST(Elementwise, BroadcastsBias) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var bias = tape.leaf(Tensor::vector({10, 20, 30}));
  EXPECT_EQ(add(x, bias).value(), Tensor::matrix(2, 3, {11, 22, 33, 14, 25, 36}));
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor::zeros({2, 3}));
  Var b = tape.leaf(Tensor::zeros({4}));
  try {
    add(a, b);
    FAIL() << "expected ShapeMismatch";
  } catch (const ShapeMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4]"), std::string::npos);
  }
}

TEST(Elementwise, SoftplusStaysFiniteForLargeInputs) {
  EXPECT_DOUBLE_EQ(softplus_value(1000.0), 1000.0);
  EXPECT_GT(softplus_value(-1000.0), -1e-300);
  EXPECT_NEAR(softplus_value(0.0), std::log(2.0), 1e-15);
}

// Independent shape calculator: pad with ones on the left, then compare.
Shape reference_broadcast(Shape a, Shape b, bool& ok) {
  while (a.size() < b.size()) a.insert(a.begin(), 1);
  while (b.size() < a.size()) b.insert(b.begin(), 1);
  Shape out;
  ok = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out.push_back(a[i]);
    } else if (a[i] == 1) {
      out.push_back(b[i]);
    } else {
      ok = false;
    }
  }
  return out;
}

TEST(Broadcast, MatchesReferenceOnRandomShapePairs) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    Shape a(rng.below(4)), b(rng.below(4));
    for (auto& d : a) d = 1 + rng.below(3);
    for (auto& d : b) d = 1 + rng.below(3);
    bool ok = false;
    const Shape expected = reference_broadcast(a, b, ok);
    if (ok) {
      EXPECT_EQ(broadcast_shapes(a, b), expected);
    } else {
      EXPECT_THROW(broadcast_shapes(a, b), ShapeMismatch);
    }
  }
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

TEST(Matmul, Examples) {
  Tape tape;
  Var eye = tape.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var m = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(eye, m).value(), m.value());
  Var sel = tape.leaf(Tensor::matrix(1, 2, {1, 0}));
  Var col = tape.leaf(Tensor::matrix(2, 1, {7.5, -3}));
  EXPECT_EQ(matmul(sel, col).value(), Tensor::matrix(1, 1, {7.5}));

  Rng rng(1);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  EXPECT_LT(testing::max_abs_diff(matmul(tape.leaf(a), tape.leaf(b)).value(), naive_matmul(a, b)),
            1e-12);
}

TEST(Matmul, BatchBroadcastAgainstPerSliceOracle) {
  Rng rng(2);
  const Tensor a = random_tensor({2, 3, 4}, rng), w = random_tensor({4, 5}, rng);
  Tape tape;
  const Tensor c = matmul(tape.leaf(a), tape.leaf(w)).value();
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor slice = Tensor::zeros({3, 4});
    for (std::size_t i = 0; i < 12; ++i) slice[i] = a[b * 12 + i];
    const Tensor ref = naive_matmul(slice, w);
    for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(c[b * 15 + i], ref[i], 1e-12);
  }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape tape;
  EXPECT_THROW(matmul(tape.leaf(Tensor::zeros({2, 3})), tape.leaf(Tensor::zeros({2, 3}))),
               ShapeMismatch);
}

TEST(Matmul, AssociativeWithinTolerance) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), p = 1 + rng.below(5),
                      n = 1 + rng.below(5);
    Tape tape;
    Var a = tape.leaf(random_tensor({m, k}, rng));
    Var b = tape.leaf(random_tensor({k, p}, rng));
    Var c = tape.leaf(random_tensor({p, n}, rng));
    EXPECT_LT(testing::max_abs_diff(matmul(matmul(a, b), c).value(),
                                    matmul(a, matmul(b, c)).value()),
              1e-9);
  }
}

TEST(Reductions, SoftmaxExamples) {
  Tape tape;
  const Tensor s = softmax(tape.leaf(Tensor::vector({0, 0, 0})), 0).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s[i], 1.0 / 3.0, 1e-15);

  const Tensor x = Tensor::vector({0.5, -1.0, 2.0});
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 100.0;
  EXPECT_LT(testing::max_abs_diff(softmax(tape.leaf(x), 0).value(),
                                  softmax(tape.leaf(shifted), 0).value()),
            1e-15);
}

TEST(Reductions, SoftmaxRowsAreDistributions) {
  Rng rng(4);
  Tape tape;
  const Tensor y = softmax(tape.leaf(random_tensor({6, 9}, rng, -5, 5)), 1).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      const double v = y[r * 9 + j];
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Reductions, RmsNormOfConstantRowIsOne) {
  Tape tape;
  const Tensor y =
      rmsnorm(tape.leaf(Tensor::vector({2, 2, 2})), tape.leaf(Tensor::vector({1, 1, 1})), 0.0)
          .value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0, 1e-15);
}

TEST(Reductions, RmsNormRowsHaveUnitRms) {
  Rng rng(5);
  Tape tape;
  const Tensor y = rmsnorm(tape.leaf(random_tensor({4, 7}, rng)),
                           tape.leaf(Tensor::full({7}, 1.0)), 0.0)
                       .value();
  for (std::size_t r = 0; r < 4; ++r) {
    double ms = 0;
    for (std::size_t j = 0; j < 7; ++j) ms += y[r * 7 + j] * y[r * 7 + j];
    EXPECT_NEAR(std::sqrt(ms / 7), 1.0, 1e-12);
  }
}

TEST(Reductions, SumAndMeanAlongAxis) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(sum(x, 0).value(), Tensor::vector({5, 7, 9}));
  EXPECT_EQ(mean(x, 1).value(), Tensor::vector({2, 5}));
  EXPECT_THROW(sum(x, 2), ShapeMismatch);
}

Tensor conv_1ch(std::initializer_list<double> x, std::initializer_list<double> k) {
  Tape tape;
  Var xv = tape.leaf(Tensor({1, x.size(), 1}, std::vector<double>(x)));
  Var kv = tape.leaf(Tensor({1, k.size()}, std::vector<double>(k)));
  return causal_depthwise_conv1d(xv, kv).value().reshaped({x.size()});
}

TEST(CausalConv, Examples) {
  EXPECT_EQ(conv_1ch({1.5, -2, 3}, {1}), Tensor::vector({1.5, -2, 3}));
  EXPECT_EQ(conv_1ch({1.5, -2, 3}, {0, 1}), Tensor::vector({1.5, -2, 3}));
  EXPECT_EQ(conv_1ch({1, 2, 3}, {1, 1}), Tensor::vector({1, 3, 5}));
}

TEST(CausalConv, OutputDependsOnlyOnPastAndOwnChannel) {
  Rng rng(6);
  const Tensor x = random_tensor({2, 6, 3}, rng);
  const Tensor k = random_tensor({3, 4}, rng);
  Tape tape;
  const Tensor base = causal_depthwise_conv1d(tape.leaf(x), tape.leaf(k)).value();
  Tensor bumped = x;
  bumped[(0 * 6 + 3) * 3 + 1] += 1.0;  // batch 0, t=3, channel 1
  const Tensor y = causal_depthwise_conv1d(tape.leaf(bumped), tape.leaf(k)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t i = (b * 6 + t) * 3 + c;
        if (b == 0 && c == 1 && t >= 3) continue;
        EXPECT_EQ(y[i], base[i]);
      }
}

TEST(CausalConv, RejectsKernelChannelMismatch) {
  Tape tape;
  EXPECT_THROW(causal_depthwise_conv1d(tape.leaf(Tensor::zeros({1, 4, 3})),
                                       tape.leaf(Tensor::zeros({2, 2}))),
               ShapeMismatch);
}

TEST(Backward, Examples) {
  {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2, 3}), true);
    EXPECT_EQ(tape.backward(sum_all(x)).of(x), Tensor::vector({1, 1, 1}));
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}), true);
    EXPECT_EQ(tape.backward(sum_all(mul(x, x))).of(x), Tensor::vector({2, 4}));
  }
}

TEST(Backward, UntouchedParametersGetZeroGradients) {
  Tape tape;
  Var used = tape.leaf(Tensor::vector({1, 2}), true);
  Var unused = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}), true);
  const Gradients g = tape.backward(sum_all(used));
  EXPECT_EQ(g.of(unused), Tensor::zeros({2, 2}));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}), true);
  EXPECT_THROW(tape.backward(exp(x)), ShapeMismatch);
}

TEST(Backward, ReportsNonFiniteGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({0.0}), true);
  try {
    tape.backward(sum_all(recip(x)));
    FAIL() << "expected NonFinite";
  } catch (const NonFinite& e) {
    EXPECT_NE(std::string(e.what()).find("NonFiniteGradient"), std::string::npos);
  }
}

TEST(FiniteDiff, Examples) {
  Rng rng(8);
  EXPECT_LT(finite_diff_check([](Tape&, Var x) { return sum_all(x); }, random_tensor({5}, rng)),
            1e-8);
  EXPECT_LT(finite_diff_check([](Tape&, Var x) { return sum_all(exp(x)); }, Tensor::vector({0})),
            1e-8);
}

TEST(FiniteDiff, TwoLayerComposite) {
  Rng rng(9);
  const Tensor w1 = random_tensor({4, 5}, rng), w2 = random_tensor({5, 1}, rng);
  auto f = [&](Tape& tape, Var x) {
    Var h = silu(matmul(x, tape.leaf(w1)));
    return mean_all(sigmoid(matmul(h, tape.leaf(w2))));
  };
  EXPECT_LT(finite_diff_check(f, random_tensor({3, 4}, rng), 1e-5), 1e-4);
}

// Every differentiable op against central differences, random inputs in
// [-2, 2]. Outputs are contracted with fixed random weights so a reduction
// cannot mask a wrong gradient.
struct GradCase {
  std::string name;
  Shape input;
  std::function<Var(Tape&, Var, Rng&)> build;
  double lo = -2.0, hi = 2.0;
};

Var contract(Tape& tape, Var v, Rng& rng) {
  return sum_all(mul(v, tape.leaf(random_tensor(v.shape(), rng))));
}

std::vector<GradCase> grad_cases() {
  using R = Rng;
  std::vector<GradCase> cases = {
      {"add_broadcast", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, add(v, t.leaf(random_tensor({4}, r))), r); }},
      {"add_into_bias", {4}, [](Tape& t, Var v, R& r) { return contract(t, add(t.leaf(random_tensor({3, 4}, r)), v), r); }},
      {"mul_broadcast", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, mul(v, t.leaf(random_tensor({4}, r))), r); }},
      {"sub", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, sub(t.leaf(random_tensor({3, 4}, r)), v), r); }},
      {"scale", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, scale(v, -1.7), r); }},
      {"exp", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, exp(v), r); }},
      {"silu", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, silu(v), r); }},
      {"sigmoid", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, sigmoid(v), r); }},
      {"softplus", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, softplus(v), r); }},
      {"neg", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, neg(v), r); }},
      {"recip", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, recip(v), r); }, 0.5, 2.0},
      {"matmul_left", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, matmul(v, t.leaf(random_tensor({4, 2}, r))), r); }},
      {"matmul_right", {4, 2}, [](Tape& t, Var v, R& r) { return contract(t, matmul(t.leaf(random_tensor({3, 4}, r)), v), r); }},
      {"matmul_batched_weight", {4, 2}, [](Tape& t, Var v, R& r) { return contract(t, matmul(t.leaf(random_tensor({2, 3, 4}, r)), v), r); }},
      {"transpose", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, transpose(v), r); }},
      {"reshape", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, reshape(v, {2, 6}), r); }},
      {"slice_last", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, slice_last(v, 1, 3), r); }},
      {"sum_axis0", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, sum(v, 0), r); }},
      {"mean_axis1", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, mean(v, 1), r); }},
      {"mean_all", {3, 4}, [](Tape&, Var v, R&) { return mean_all(exp(v)); }},
      {"softmax_last", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, softmax(v, 1), r); }},
      {"softmax_first", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, softmax(v, 0), r); }},
      {"rmsnorm_input", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, rmsnorm(v, t.leaf(random_tensor({4}, r)), 1e-5), r); }},
      {"rmsnorm_gain", {4}, [](Tape& t, Var v, R& r) { return contract(t, rmsnorm(t.leaf(random_tensor({3, 4}, r)), v, 1e-5), r); }},
      {"conv_input", {2, 5, 3}, [](Tape& t, Var v, R& r) { return contract(t, causal_depthwise_conv1d(v, t.leaf(random_tensor({3, 4}, r))), r); }},
      {"conv_kernel", {3, 4}, [](Tape& t, Var v, R& r) { return contract(t, causal_depthwise_conv1d(t.leaf(random_tensor({2, 5, 3}, r)), v), r); }},
      {"conv_with_history", {3, 4}, [](Tape& t, Var v, R& r) {
         const Tensor hist = random_tensor({2, 3, 3}, r);
         return contract(t, causal_depthwise_conv1d(t.leaf(random_tensor({2, 5, 3}, r)), v, &hist), r);
       }},
      {"gather_rows", {3, 4}, [](Tape& t, Var v, R& r) {
         const std::vector<int> ids = {2, 0, 2, 1};
         return contract(t, gather_rows(v, ids, {2, 2}), r);
       }},
  };
  return cases;
}

class OpGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const GradCase& c = GetParam();
  Rng input_rng(11);
  const Tensor x = random_tensor(c.input, input_rng, c.lo, c.hi);
  // Each evaluation must see the same constants, so the closure reseeds.
  auto f = [&c](Tape& tape, Var v) {
    Rng rng(99);
    return c.build(tape, v, rng);
  };
  EXPECT_LT(finite_diff_check(f, x, 1e-5), 1e-4) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(grad_cases()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
}  // namespace smamba
