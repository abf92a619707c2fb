#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ehrfuse/error.hpp"

namespace ehrfuse {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Positive prediction iff score >= threshold.
inline ConfusionCounts confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) throw DataError("confusion: scores and labels differ in length");
  if (scores.empty()) throw DataError("confusion needs at least one sample");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double sensitivity(const ConfusionCounts& c) {
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double specificity(const ConfusionCounts& c) {
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

inline double bacc(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) throw DataError("BACC undefined: single-class evaluation set");
  return (sensitivity(c) + specificity(c)) / 2.0;
}

/// Mean per-class recall; equals bacc() for two classes.
inline double balanced_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> actual,
                                std::size_t num_classes) {
  std::vector<std::size_t> hit(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ++total.at(actual[i]);
    if (predicted[i] == actual[i]) ++hit[actual[i]];
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (total[k] == 0) throw DataError("BACC undefined: class " + std::to_string(k) + " absent from evaluation set");
    sum += static_cast<double>(hit[k]) / static_cast<double>(total[k]);
  }
  return sum / static_cast<double>(num_classes);
}

/// Mann-Whitney estimate: share of (positive, negative) pairs ranked
/// correctly, ties counting one half. Midranks over a sort, O(N log N).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DataError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  for (double s : scores) {
    if (!std::isfinite(s)) throw DataError("auroc: non-finite score");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the midrank keeps the rank sum integral.
  std::uint64_t pos = 0;
  std::uint64_t rank_sum_x2 = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    while (end < n && scores[order[end]] == scores[order[start]]) ++end;
    const std::uint64_t midrank_x2 = start + end + 1;  // ranks start+1 .. end
    for (std::size_t k = start; k < end; ++k) {
      if (labels[order[k]] != 0) {
        ++pos;
        rank_sum_x2 += midrank_x2;
      }
    }
    start = end;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DataError("AUROC undefined: single-class evaluation set");
  // U = R_pos - pos(pos+1)/2, all doubled
  const std::uint64_t u_x2 = rank_sum_x2 - pos * (pos + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double rmse(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw DataError("rmse: predictions and targets differ in length");
  if (preds.empty()) throw DataError("rmse needs at least one sample");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (targets[i] - preds[i]) * (targets[i] - preds[i]);
  return std::sqrt(s / static_cast<double>(preds.size()));
}

inline double mae(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw DataError("mae: predictions and targets differ in length");
  if (preds.empty()) throw DataError("mae needs at least one sample");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(targets[i] - preds[i]);
  return s / static_cast<double>(preds.size());
}

struct ThresholdPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double bacc = 0.0;
  ConfusionCounts counts;
};

struct ThresholdCurve {
  std::vector<ThresholdPoint> points;
};

/// `count` evenly spaced thresholds over [0, 1].
inline std::vector<double> default_threshold_grid(std::size_t count = 101) {
  std::vector<double> grid(count);
  for (std::size_t k = 0; k < count; ++k) {
    grid[k] = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
  }
  return grid;
}

inline ThresholdCurve threshold_sweep(std::span<const double> scores, std::span<const int> labels,
                                      std::span<const double> grid) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw DataError("threshold grid must be sorted ascending");
  ThresholdCurve curve;
  for (double t : grid) {
    const auto c = confusion(scores, labels, t);
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0) throw DataError("threshold sweep undefined: single-class evaluation set");
    curve.points.push_back({t, sensitivity(c), specificity(c), bacc(c), c});
  }
  return curve;
}

}  // namespace ehrfuse
