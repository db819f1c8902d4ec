#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "smamba/errors.hpp"
#include "smamba/metrics.hpp"

namespace smamba {
namespace {

using V = std::vector<double>;

TEST(RocAuc, Examples) {
  EXPECT_DOUBLE_EQ(roc_auc(V{0.9, 0.1}, V{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(V{0.1, 0.9}, V{1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(V{0.3, 0.3, 0.3, 0.3}, V{1, 0, 1, 0}), 0.5);
  // One tie between a positive and a negative: (1 + 1 + 0.5 + 1) / 4.
  EXPECT_DOUBLE_EQ(roc_auc(V{0.9, 0.5, 0.5, 0.1}, V{1, 1, 0, 0}), 3.5 / 4.0);
}

TEST(RocAuc, Errors) {
  EXPECT_THROW(roc_auc(V{0.1, 0.2}, V{1, 1}), ValidationError);
  EXPECT_THROW(roc_auc(V{0.1, 0.2}, V{0, 0}), ValidationError);
  EXPECT_THROW(roc_auc(V{0.1, 0.2}, V{0, 2}), ValidationError);
  EXPECT_THROW(roc_auc(V{0.1}, V{0, 1}), ShapeMismatch);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = oracle::random_prediction_set(rng, 50);
    EXPECT_NEAR(roc_auc(p.scores, p.labels), oracle::pairwise_auc(p.scores, p.labels), 1e-12);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_prediction_set(rng, 40);
    V t;
    for (double s : p.scores) t.push_back(std::exp(3.0 * s) - 7.0);
    EXPECT_NEAR(roc_auc(t, p.labels), roc_auc(p.scores, p.labels), 1e-12);
  }
}

TEST(RocAuc, NegatedScoresComplementWithoutTies) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    V s, y;
    for (int i = 0; i < 30; ++i) {
      s.push_back(rng.uniform());
      y.push_back(static_cast<double>(i % 2));
    }
    V neg;
    for (double v : s) neg.push_back(-v);
    EXPECT_NEAR(roc_auc(s, y) + roc_auc(neg, y), 1.0, 1e-12);
  }
}

TEST(PrAuc, Examples) {
  EXPECT_DOUBLE_EQ(pr_auc(V{0.9, 0.8, 0.2, 0.1}, V{1, 1, 0, 0}), 1.0);
  // Single positive ranked last among n: precision 1/n at full recall.
  for (int n : {2, 5, 17}) {
    V s, y;
    for (int i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(n - i));
      y.push_back(i == n - 1 ? 1.0 : 0.0);
    }
    EXPECT_DOUBLE_EQ(pr_auc(s, y), 1.0 / n);
  }
  // A tied block counts once: all four tied, two positive -> precision 1/2.
  EXPECT_DOUBLE_EQ(pr_auc(V{1, 1, 1, 1}, V{1, 0, 1, 0}), 0.5);
  EXPECT_THROW(pr_auc(V{0.1, 0.2}, V{0, 0}), ValidationError);
}

TEST(PrAuc, MatchesThresholdSweepOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = oracle::random_prediction_set(rng, 50);
    EXPECT_NEAR(pr_auc(p.scores, p.labels), oracle::sweep_ap(p.scores, p.labels), 1e-12);
  }
}

TEST(Mae, Examples) {
  EXPECT_EQ(mae(V{1, 2, 3}, V{1, 2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(mae(V{0, 0}, V{1, -1}), 1.0);
  EXPECT_THROW(mae(V{0, 0}, V{1}), ShapeMismatch);
  EXPECT_THROW(mae(V{}, V{}), ShapeMismatch);
}

TEST(Mae, MatchesLoopAndIsSymmetric) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    V a, b;
    const std::size_t n = 1 + rng.below(40);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(rng.normal());
      b.push_back(rng.normal());
      total += std::abs(a.back() - b.back());
    }
    EXPECT_NEAR(mae(a, b), total / static_cast<double>(n), 1e-12);
    EXPECT_EQ(mae(a, b), mae(b, a));
    EXPECT_EQ(mae(a, a), 0.0);
  }
}

TEST(Spearman, Examples) {
  EXPECT_DOUBLE_EQ(spearman(V{1, 2, 3, 4}, V{10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(V{1, 2, 3, 4}, V{40, 30, 20, 10}), -1.0);
  EXPECT_THROW(spearman(V{1}, V{1}), ValidationError);
  EXPECT_THROW(spearman(V{1, 1, 1}, V{1, 2, 3}), ValidationError);
}

TEST(Spearman, AverageRanks) {
  const V r = average_ranks(V{10, 20, 10, 30, 20, 20});
  EXPECT_EQ(r, (V{1.5, 4, 1.5, 6, 4, 4}));
}

TEST(Spearman, MatchesRankPearsonOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = oracle::random_prediction_set(rng, 50);
    EXPECT_NEAR(spearman(p.scores, p.targets), oracle::rank_spearman(p.scores, p.targets), 1e-12);
  }
}

TEST(Spearman, InvariantUnderIncreasingTransforms) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_prediction_set(rng, 40);
    V a, b;
    for (double s : p.scores) a.push_back(std::atan(s) * 5.0);
    for (double t : p.targets) b.push_back(std::exp(t / 4.0));
    EXPECT_NEAR(spearman(a, b), spearman(p.scores, p.targets), 1e-12);
  }
}

TEST(Metric, NamesAndParsing) {
  for (Metric m : {Metric::kRocAuc, Metric::kPrAuc, Metric::kMae, Metric::kSpearman}) {
    EXPECT_EQ(parse_metric(metric_name(m)), m);
  }
  EXPECT_EQ(parse_metric("roc_auc"), Metric::kRocAuc);
  EXPECT_THROW(parse_metric("accuracy"), ConfigError);
  EXPECT_FALSE(higher_is_better(Metric::kMae));
  EXPECT_TRUE(higher_is_better(Metric::kSpearman));
}

TEST(Report, LineFormatIsExact) {
  const MetricReport r{"Caco2_Wang", Metric::kMae, 0.4375, 181, 3};
  EXPECT_EQ(report_line(r), R"({"dataset":"Caco2_Wang","metric":"MAE","seed":3,"value":0.4375})");
}

TEST(Aggregate, Examples) {
  auto rep = [](double v) { return MetricReport{"d", Metric::kRocAuc, v, 10, 0}; };
  const std::vector<MetricReport> same = {rep(0.8), rep(0.8), rep(0.8)};
  EXPECT_EQ(aggregate(same).std, 0.0);
  const std::vector<MetricReport> two = {rep(0.0), rep(1.0)};
  const Aggregate a = aggregate(two);
  EXPECT_DOUBLE_EQ(a.mean, 0.5);
  EXPECT_NEAR(a.std, std::sqrt(0.5), 1e-15);
  EXPECT_EQ(a.render(), "0.500±0.707");
  const std::vector<MetricReport> one = {rep(0.3)};
  EXPECT_THROW(aggregate(one), ValidationError);
  const std::vector<MetricReport> mixed = {rep(0.3), {"d", Metric::kMae, 1.0, 10, 1}};
  EXPECT_THROW(aggregate(mixed), ValidationError);
}

TEST(Aggregate, MatchesHandFormula) {
  const V v = {0.91, 0.88, 0.95, 0.90, 0.86};
  std::vector<MetricReport> reps;
  for (double x : v) reps.push_back({"d", Metric::kRocAuc, x, 1, 0});
  const double mean = (0.91 + 0.88 + 0.95 + 0.90 + 0.86) / 5.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const Aggregate a = aggregate(reps);
  EXPECT_NEAR(a.mean, mean, 1e-15);
  EXPECT_NEAR(a.std, std::sqrt(ss / 4.0), 1e-15);
}

TEST(Aggregate, TableListsEveryRow) {
  const std::string t = render_table({{"HIA_Hou", {Metric::kRocAuc, 0.98, 0.01, 5}},
                                      {"Caco2_Wang", {Metric::kMae, 0.438, 0.03, 5}}});
  EXPECT_NE(t.find("HIA_Hou"), std::string::npos);
  EXPECT_NE(t.find("0.438±0.030"), std::string::npos);
  EXPECT_NE(t.find("0.980±0.010"), std::string::npos);
}

}  // namespace
}  // namespace smamba
