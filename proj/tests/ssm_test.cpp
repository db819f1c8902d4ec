#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "smamba/autodiff.hpp"
#include "smamba/errors.hpp"
#include "smamba/ops.hpp"
#include "smamba/ssm.hpp"
#include "test_util.hpp"

namespace smamba {
namespace {

using testing::random_tensor;

struct Instance {
  Tensor u, delta, A, B, C, D;
  ScanInputs inputs() const { return {u, delta, A, B, C, D}; }
};

Instance random_instance(Rng& rng, std::size_t b, std::size_t l, std::size_t di, std::size_t n) {
  Instance x{random_tensor({b, l, di}, rng, -3, 3),
             random_tensor({b, l, di}, rng, 1e-3, 0.5),
             random_tensor({di, n}, rng, -4, -0.05),
             random_tensor({b, l, n}, rng),
             random_tensor({b, l, n}, rng),
             random_tensor({di}, rng)};
  return x;
}

// Straight-line recurrence, one (batch, channel) pair at a time, with its own
// discretization.
Tensor naive_scan(const Instance& x) {
  const std::size_t nb = x.u.dim(0), l = x.u.dim(1), di = x.u.dim(2), n = x.A.dim(1);
  Tensor y = Tensor::zeros({nb, l, di});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < di; ++i) {
      std::vector<double> h(n, 0.0);
      for (std::size_t t = 0; t < l; ++t) {
        const double dt = x.delta[(b * l + t) * di + i];
        const double ut = x.u[(b * l + t) * di + i];
        double out = x.D[i] * ut;
        for (std::size_t k = 0; k < n; ++k) {
          const double abar = std::exp(dt * x.A[i * n + k]);
          const double bbar = dt * x.B[(b * l + t) * n + k];
          h[k] = abar * h[k] + bbar * ut;
          out += x.C[(b * l + t) * n + k] * h[k];
        }
        y[(b * l + t) * di + i] = out;
      }
    }
  return y;
}

TEST(Discretize, Examples) {
  const Tensor delta({1, 1, 1}, {std::log(2.0)});
  const Tensor A({1, 1}, {-1.0});
  const Tensor B({1, 1, 1}, {3.0});
  const Discretized d = discretize(delta, A, B);
  EXPECT_NEAR(d.a_bar.item(), 0.5, 1e-15);
  EXPECT_NEAR(d.b_bar.item(), 3.0 * std::log(2.0), 1e-15);

  const Discretized small = discretize(Tensor({1, 1, 1}, {1e-12}), A, B);
  EXPECT_NEAR(small.a_bar.item(), 1.0, 1e-11);
  EXPECT_NEAR(small.b_bar.item(), 0.0, 1e-11);
}

TEST(Discretize, TransitionInUnitIntervalOverManySamples) {
  Rng rng(21);
  const Tensor delta = random_tensor({10, 10, 10}, rng, 1e-4, 2.0);
  const Tensor A = random_tensor({10, 10}, rng, -8.0, -1e-3);
  const Tensor B = random_tensor({10, 10, 10}, rng);
  const Discretized d = discretize(delta, A, B);
  ASSERT_EQ(d.a_bar.shape(), (Shape{10, 10, 10, 10}));
  for (double v : d.a_bar.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Discretize, OverflowIsNonFinite) {
  EXPECT_THROW(discretize(Tensor({1, 1, 1}, {1e3}), Tensor({1, 1}, {1e3}), Tensor({1, 1, 1}, {1})),
               NonFinite);
}

TEST(SequentialScan, SkipPathOnlyWhenCIsZero) {
  Rng rng(22);
  Instance x = random_instance(rng, 2, 5, 3, 4);
  x.C = Tensor::zeros(x.C.shape());
  x.D = Tensor::full({3}, 1.0);
  EXPECT_EQ(selective_scan_sequential(x.inputs()).y, x.u);
}

TEST(SequentialScan, CumulativeSumInTheUndampedLimit) {
  // A so close to zero that exp(delta * A) rounds to exactly 1.
  const Instance x{Tensor({1, 3, 1}, {1, 2, 3}), Tensor::full({1, 3, 1}, 1.0),
                   Tensor({1, 1}, {-1e-300}),     Tensor::full({1, 3, 1}, 1.0),
                   Tensor::full({1, 3, 1}, 1.0),  Tensor::zeros({1})};
  EXPECT_EQ(selective_scan_sequential(x.inputs()).y, Tensor({1, 3, 1}, {1, 3, 6}));
  EXPECT_EQ(selective_scan_parallel(x.inputs()).y, Tensor({1, 3, 1}, {1, 3, 6}));
}

TEST(SequentialScan, MatchesNaiveOracle) {
  Rng rng(23);
  const Instance x = random_instance(rng, 3, 17, 5, 4);
  EXPECT_LT(testing::max_abs_diff(selective_scan_sequential(x.inputs()).y, naive_scan(x)), 1e-12);
}

TEST(SequentialScan, ReportsTimeIndexOfNonFiniteOutput) {
  Rng rng(24);
  Instance x = random_instance(rng, 1, 6, 2, 2);
  x.u[4 * 2 + 1] = std::numeric_limits<double>::infinity();
  try {
    selective_scan_sequential(x.inputs());
    FAIL() << "expected NonFinite";
  } catch (const NonFinite& e) {
    EXPECT_NE(std::string(e.what()).find("time index 4"), std::string::npos) << e.what();
  }
}

TEST(SequentialScan, RejectsMismatchedShapes) {
  Rng rng(25);
  Instance x = random_instance(rng, 1, 4, 2, 3);
  x.B = Tensor::zeros({1, 4, 2});
  EXPECT_THROW(selective_scan_sequential(x.inputs()), ShapeMismatch);
}

TEST(ParallelScan, LengthOneIsExact) {
  Rng rng(26);
  const Instance x = random_instance(rng, 2, 1, 3, 5);
  EXPECT_EQ(selective_scan_parallel(x.inputs()).y, selective_scan_sequential(x.inputs()).y);
}

TEST(ParallelScan, CompositionLaw) {
  Rng rng(27);
  for (int i = 0; i < 1000; ++i) {
    const Affine f{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Affine g{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const double h = rng.uniform(-2, 2);
    EXPECT_NEAR(compose(f, g).apply(h), g.a * (f.a * h + f.b) + g.b, 1e-12);
  }
}

TEST(ParallelScan, CompositionIsAssociative) {
  Rng rng(28);
  for (int i = 0; i < 1000; ++i) {
    const Affine f{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Affine g{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Affine k{rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Affine left = compose(compose(f, g), k), right = compose(f, compose(g, k));
    EXPECT_NEAR(left.a, right.a, 1e-12);
    EXPECT_NEAR(left.b, right.b, 1e-12);
  }
}

TEST(ParallelScan, EquivalentToSequentialOnRandomConfigs) {
  Rng rng(29);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t b = 1 + rng.below(4), l = 1 + rng.below(512), di = 1 + rng.below(64),
                      n = 1 + rng.below(16);
    const Instance x = random_instance(rng, b, l, di, n);
    const unsigned threads = 1 + static_cast<unsigned>(rng.below(4));
    const ScanResult par = selective_scan_parallel(x.inputs(), nullptr, threads);
    const ScanResult seq = selective_scan_sequential(x.inputs());
    worst = std::max(worst, testing::max_abs_diff(par.y, seq.y));
    worst = std::max(worst, testing::max_abs_diff(par.states, seq.states));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(ParallelScan, InitialStateIsHonored) {
  Rng rng(30);
  const Instance x = random_instance(rng, 2, 9, 3, 2);
  const Tensor h0 = random_tensor({2, 3, 2}, rng);
  EXPECT_LT(testing::max_abs_diff(selective_scan_parallel(x.inputs(), &h0).y,
                                  selective_scan_sequential(x.inputs(), &h0).y),
            1e-12);
}

TEST(ScanState, ChunkedScanMatchesWholeSequence) {
  Rng rng(31);
  const Instance x = random_instance(rng, 2, 10, 3, 4);
  const ScanResult whole = selective_scan_sequential(x.inputs());

  Tape tape;
  auto chunk = [&](const Tensor& t, std::size_t begin, std::size_t end) {
    const std::size_t last = t.dim(2);
    Tensor out = Tensor::zeros({t.dim(0), end - begin, last});
    for (std::size_t b = 0; b < t.dim(0); ++b)
      for (std::size_t s = begin; s < end; ++s)
        for (std::size_t k = 0; k < last; ++k)
          out[(b * (end - begin) + s - begin) * last + k] = t[(b * t.dim(1) + s) * last + k];
    return tape.leaf(out);
  };
  Tensor state;
  const Var first = selective_scan(chunk(x.u, 0, 6), chunk(x.delta, 0, 6), tape.leaf(x.A),
                                   chunk(x.B, 0, 6), chunk(x.C, 0, 6), tape.leaf(x.D),
                                   ScanMode::kSequential, nullptr, &state);
  const Var second = selective_scan(chunk(x.u, 6, 10), chunk(x.delta, 6, 10), tape.leaf(x.A),
                                    chunk(x.B, 6, 10), chunk(x.C, 6, 10), tape.leaf(x.D),
                                    ScanMode::kParallel, &state);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 10; ++t)
      for (std::size_t i = 0; i < 3; ++i) {
        const double got = t < 6 ? first.value()[(b * 6 + t) * 3 + i]
                                 : second.value()[(b * 4 + t - 6) * 3 + i];
        EXPECT_NEAR(got, whole.y[(b * 10 + t) * 3 + i], 1e-12);
      }
}

// Gradient of the differentiable scan with respect to each operand.
class ScanGradient : public ::testing::TestWithParam<std::tuple<int, ScanMode>> {};

TEST_P(ScanGradient, MatchesFiniteDifferences) {
  const auto [operand, mode] = GetParam();
  Rng rng(40);
  const Instance x = random_instance(rng, 2, 5, 3, 2);
  const Tensor h0 = random_tensor({2, 3, 2}, rng);
  const Tensor weights = random_tensor({2, 5, 3}, rng);
  const Tensor* operands[] = {&x.u, &x.delta, &x.A, &x.B, &x.C, &x.D};
  auto f = [&, operand, mode](Tape& tape, Var v) {
    std::vector<Var> args;
    for (int k = 0; k < 6; ++k) args.push_back(k == operand ? v : tape.leaf(*operands[k]));
    const Var y =
        selective_scan(args[0], args[1], args[2], args[3], args[4], args[5], mode, &h0);
    return sum_all(mul(y, tape.leaf(weights)));
  };
  EXPECT_LT(finite_diff_check(f, *operands[operand]), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllOperands, ScanGradient,
                         ::testing::Combine(::testing::Range(0, 6),
                                            ::testing::Values(ScanMode::kSequential,
                                                              ScanMode::kParallel)));

}  // namespace
}  // namespace smamba
