#include "smamba/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "smamba/errors.hpp"

namespace smamba {
namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.size()) + " predictions vs " +
                        std::to_string(b.size()) + " labels");
  }
  if (a.empty()) throw ShapeMismatch(std::string(what) + ": no samples");
}

std::size_t count_positives(std::span<const double> labels, const char* what) {
  std::size_t pos = 0;
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) {
      throw ValidationError(std::string(what) + ": labels must be 0 or 1, got " + std::to_string(y));
    }
    pos += y == 1.0;
  }
  return pos;
}

// Indices sorted by descending score, stable so ties keep input order.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::string format3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::kRocAuc: return "ROC-AUC";
    case Metric::kPrAuc: return "PR-AUC";
    case Metric::kMae: return "MAE";
    case Metric::kSpearman: return "Spearman";
  }
  return "?";
}

Metric parse_metric(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (c != '-' && c != '_') key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (key == "rocauc") return Metric::kRocAuc;
  if (key == "prauc") return Metric::kPrAuc;
  if (key == "mae") return Metric::kMae;
  if (key == "spearman") return Metric::kSpearman;
  throw ConfigError("unknown metric '" + std::string(text) + "'");
}

bool higher_is_better(Metric m) { return m != Metric::kMae; }

bool needs_binary_labels(Metric m) { return m == Metric::kRocAuc || m == Metric::kPrAuc; }

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share ranks i+1..j+1.
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double roc_auc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels, "roc_auc");
  const std::size_t pos = count_positives(labels, "roc_auc");
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw ValidationError("DegenerateLabels: roc_auc needs both classes, got " +
                          std::to_string(pos) + " positives and " + std::to_string(neg) +
                          " negatives");
  }
  const std::vector<double> ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i] == 1.0) rank_sum += ranks[i];
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double pr_auc(std::span<const double> scores, std::span<const double> labels) {
  check_lengths(scores, labels, "pr_auc");
  const std::size_t pos = count_positives(labels, "pr_auc");
  if (pos == 0) throw ValidationError("NoPositives: pr_auc needs at least one positive label");
  const std::vector<std::size_t> order = descending(scores);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] == 1.0;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double mae(std::span<const double> preds, std::span<const double> labels) {
  check_lengths(preds, labels, "mae");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += std::abs(preds[i] - labels[i]);
  return total / static_cast<double>(preds.size());
}

double spearman(std::span<const double> preds, std::span<const double> labels) {
  check_lengths(preds, labels, "spearman");
  if (preds.size() < 2) throw ValidationError("ZeroVariance: spearman needs at least two samples");
  const std::vector<double> rx = average_ranks(preds), ry = average_ranks(labels);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw ValidationError("ZeroVariance: spearman is undefined for constant ranks");
  }
  return sxy / std::sqrt(sxx * syy);
}

double compute_metric(Metric m, std::span<const double> preds, std::span<const double> labels) {
  switch (m) {
    case Metric::kRocAuc: return roc_auc(preds, labels);
    case Metric::kPrAuc: return pr_auc(preds, labels);
    case Metric::kMae: return mae(preds, labels);
    case Metric::kSpearman: return spearman(preds, labels);
  }
  throw ConfigError("unknown metric");
}

std::string report_line(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["metric"] = std::string(metric_name(r.metric));
  j["seed"] = r.seed;
  j["value"] = r.value;
  return j.dump();
}

std::string Aggregate::render() const { return format3(mean) + "±" + format3(std); }

Aggregate aggregate(std::span<const MetricReport> reports) {
  if (reports.size() < 2) {
    throw ValidationError("aggregate needs at least two runs, got " +
                          std::to_string(reports.size()));
  }
  Aggregate a;
  a.metric = reports.front().metric;
  a.runs = reports.size();
  double sum = 0.0;
  for (const MetricReport& r : reports) {
    if (r.metric != a.metric) {
      throw ValidationError("MixedMetrics: cannot aggregate " +
                            std::string(metric_name(a.metric)) + " with " +
                            std::string(metric_name(r.metric)));
    }
    sum += r.value;
  }
  const double n = static_cast<double>(reports.size());
  a.mean = sum / n;
  // Centered on the first run so identical runs give exactly 0.
  const double shift = reports.front().value;
  double s1 = 0.0, s2 = 0.0;
  for (const MetricReport& r : reports) {
    s1 += r.value - shift;
    s2 += (r.value - shift) * (r.value - shift);
  }
  a.std = std::sqrt(std::max(0.0, (s2 - s1 * s1 / n) / (n - 1.0)));
  return a;
}

std::string render_table(const std::vector<std::pair<std::string, Aggregate>>& rows) {
  std::size_t width = 7;
  for (const auto& [name, agg] : rows) width = std::max(width, name.size());
  std::ostringstream out;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  out << pad("dataset", width) << "  " << pad("metric", 8) << "  " << pad("mean±std", 12)
      << "  runs\n";
  for (const auto& [name, agg] : rows) {
    // The ± sign is two bytes but one column.
    out << pad(name, width) << "  " << pad(std::string(metric_name(agg.metric)), 8) << "  "
        << pad(agg.render(), 13) << "  " << agg.runs << "\n";
  }
  return out.str();
}

}  // namespace smamba
