#pragma once

// Localization and detection metrics on plain arrays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dmac/error.hpp"

namespace dmac::metrics {

// 1 where p > threshold (strictly).
inline std::vector<std::uint8_t> binarize(std::span<const double> probs, double threshold = 0.5) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > threshold ? 1 : 0;
  return out;
}

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("confusion: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(gt.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Both empty counts as a perfect match.
inline double iou(const ConfusionCounts& c) {
  const double d = static_cast<double>(c.tp + c.fp + c.fn);
  return d == 0 ? 1.0 : c.tp / d;
}

// Zero when any marginal is empty.
inline double mcc(const ConfusionCounts& c) {
  const double tp = c.tp, fp = c.fp, fn = c.fn, tn = c.tn;
  const double d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  return d == 0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(d);
}

// (TP - FN - FP) / |GT| clipped at -1; empty ground truth scores 0 when the
// prediction is empty too, -1 otherwise.
inline double nmm(const ConfusionCounts& c) {
  const double gt = static_cast<double>(c.tp + c.fn);
  if (gt == 0) return c.fp == 0 ? 0.0 : -1.0;
  return std::max(-1.0, (static_cast<double>(c.tp) - c.fn - c.fp) / gt);
}

// Mean of the tampered probabilities above 0.5, zero if there are none.
inline double detected_mean(std::span<const double> tampered) {
  double s = 0;
  std::size_t n = 0;
  for (double p : tampered) {
    if (p > 0.5) {
      s += p;
      ++n;
    }
  }
  return n ? s / n : 0.0;
}

inline double detection_score(std::span<const double> tampered_a, std::span<const double> tampered_b) {
  return 0.5 * (detected_mean(tampered_a) + detected_mean(tampered_b));
}

namespace detail {

inline void require_two_classes(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) throw DimensionError(std::string(what) + ": scores and labels differ in length");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size())) {
    throw UndefinedMetricError(std::string(what) + ": needs at least one positive and one negative");
  }
}

struct RocPoint {
  double fpr, tpr;
};

// Thresholds swept from the highest score down; tied scores enter together.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double N = static_cast<double>(labels.size()) - P;
  std::vector<RocPoint> pts{{0, 0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? tp : fp) += 1;
    pts.push_back({fp / N, tp / P});
  }
  return pts;
}

}  // namespace detail

// P(score+ > score-) + P(tie) / 2 over all positive/negative pairs, via ranks.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_two_classes(scores, labels, "roc_auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * (i + 1 + j);  // average 1-based rank of the tie block
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += mid;
    }
    i = j;
  }
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double N = static_cast<double>(labels.size()) - P;
  return (rank_sum - P * (P + 1) / 2) / (P * N);
}

inline double trapezoid_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::require_two_classes(scores, labels, "trapezoid_auc");
  const auto pts = detail::roc_curve(scores, labels);
  double a = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2;
  }
  return a;
}

// Where FPR meets FNR along the ROC curve, linearly interpolated between
// the two thresholds that bracket the crossing.
inline double eer(std::span<const double> scores, std::span<const int> labels) {
  detail::require_two_classes(scores, labels, "eer");
  const auto pts = detail::roc_curve(scores, labels);
  auto gap = [](const detail::RocPoint& p) { return p.fpr - (1 - p.tpr); };
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double g0 = gap(pts[i - 1]), g1 = gap(pts[i]);
    if (g1 >= 0) {
      const double t = g1 == g0 ? 0.0 : -g0 / (g1 - g0);
      return pts[i - 1].fpr + t * (pts[i].fpr - pts[i - 1].fpr);
    }
  }
  return 1.0;
}

struct PrecisionRecall {
  double precision = 0, recall = 0, f1 = 0;
};

inline PrecisionRecall precision_recall_f1(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  PrecisionRecall r;
  r.precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// Positive prediction when score > threshold.
inline PrecisionRecall precision_recall_f1(std::span<const double> scores, std::span<const int> labels,
                                           double threshold = 0.5) {
  if (scores.size() != labels.size()) throw DimensionError("precision_recall_f1: length mismatch");
  if (!(threshold >= 0 && threshold <= 1)) throw ParameterError("precision_recall_f1: threshold outside [0,1]");
  std::uint64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool p = scores[i] > threshold, g = labels[i] == 1;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  return precision_recall_f1(tp, fp, fn);
}

}  // namespace dmac::metrics
