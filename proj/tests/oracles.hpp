#pragma once

// Brute-force reference implementations used to check the library. They are
// written from the textbook definitions and share no code with src/.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "smamba/random.hpp"

namespace smamba::oracle {

// (sum over positive/negative pairs of [s_p > s_n] + 0.5 [s_p == s_n]) / (P N)
inline double pairwise_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1.0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Sweep every distinct score as a threshold (predict positive when s >= t),
// from the highest down, and sum (R_k - R_{k-1}) P_k.
inline double sweep_ap(const std::vector<double>& s, const std::vector<double>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double positives = 0.0;
  for (double v : y) positives += v;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        predicted += 1.0;
        tp += y[i];
      }
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return ap;
}

// Rank of each value: 1 + (number strictly smaller) + (ties - 1) / 2.
inline std::vector<double> counting_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return cov / std::sqrt(vx * vy);
}

inline double rank_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(counting_ranks(a), counting_ranks(b));
}

// A prediction set of size 2..max_n with both label classes present. Half of
// the sets draw scores from a handful of values so ties are common.
struct PredictionSet {
  std::vector<double> scores;
  std::vector<double> labels;  // 0/1
  std::vector<double> targets; // continuous, for rank metrics
};

inline PredictionSet random_prediction_set(Rng& rng, std::size_t max_n) {
  PredictionSet p;
  const std::size_t n = 2 + rng.below(max_n - 1);
  const bool tied = rng.below(2) == 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.scores.push_back(tied ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform());
    p.labels.push_back(static_cast<double>(rng.below(2)));
    p.targets.push_back(tied ? static_cast<double>(rng.below(4)) : rng.normal());
  }
  p.labels[0] = 1.0;
  p.labels[1] = 0.0;
  // Rank metrics need variance on both sides.
  p.scores[0] = -1.0;
  p.scores[1] = 2.0;
  p.targets[0] = -10.0;
  p.targets[1] = 10.0;
  return p;
}

}  // namespace smamba::oracle
