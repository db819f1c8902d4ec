#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace smamba {

enum class Metric { kRocAuc, kPrAuc, kMae, kSpearman };

// "ROC-AUC", "PR-AUC", "MAE", "Spearman".
std::string_view metric_name(Metric m);
// Accepts the names above case-insensitively, with or without the dash.
// Throws ConfigError otherwise.
Metric parse_metric(std::string_view text);
bool higher_is_better(Metric m);
// ROC-AUC and PR-AUC need 0/1 labels.
bool needs_binary_labels(Metric m);

// Mann-Whitney statistic with half credit for tied scores. Labels must be 0
// or 1 with both classes present (DegenerateLabels otherwise).
double roc_auc(std::span<const double> scores, std::span<const double> labels);

// Average precision over descending distinct thresholds; tied scores enter
// as one block. Throws NoPositives when no label is 1.
double pr_auc(std::span<const double> scores, std::span<const double> labels);

double mae(std::span<const double> preds, std::span<const double> labels);

// Pearson correlation of average ranks. Throws ZeroVariance when either
// side is constant.
double spearman(std::span<const double> preds, std::span<const double> labels);

// Ranks 1..n with ties given their average rank.
std::vector<double> average_ranks(std::span<const double> values);

double compute_metric(Metric m, std::span<const double> preds, std::span<const double> labels);

struct MetricReport {
  std::string dataset;
  Metric metric = Metric::kRocAuc;
  double value = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

// One line of the report export: {"dataset","metric","seed","value"}.
std::string report_line(const MetricReport& r);

struct Aggregate {
  Metric metric = Metric::kRocAuc;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  std::size_t runs = 0;
  // "0.500±0.707"
  std::string render() const;
};

// Needs at least two reports of one metric (MixedMetrics otherwise).
Aggregate aggregate(std::span<const MetricReport> reports);

// Plain-text table, one row per dataset: name, metric, mean±std, runs.
std::string render_table(const std::vector<std::pair<std::string, Aggregate>>& rows);

}  // namespace smamba
