#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "mtsc/core.hpp"

namespace mtsc {

/// ROC-AUC as the probability of concordance with ties counted 0.5
/// (Mann-Whitney rank formulation). Requires both classes present.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check(scores.size() == labels.size(), "roc_auc: size mismatch");
  size_t n = scores.size();
  size_t positives = 0;
  for (int l : labels) positives += size_t(l == 1);
  size_t negatives = n - positives;
  check(positives > 0 && negatives > 0, "roc_auc: both classes must be present");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks over tie groups
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = 0.5 * double(i + 1 + j);  // average of ranks i+1..j
    for (size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  double np = double(positives), nn = double(negatives);
  return (rank_sum_pos - np * (np + 1) / 2.0) / (np * nn);
}

/// PR-AUC as average precision: the step-wise sum of precision at each
/// recall increment, processing descending score thresholds with tie groups
/// absorbed whole. Requires at least one positive.
inline double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check(scores.size() == labels.size(), "pr_auc: size mismatch");
  size_t n = scores.size();
  size_t positives = 0;
  for (int l : labels) positives += size_t(l == 1);
  check(positives > 0, "pr_auc: no positives");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1)
        tp += 1.0;
      else
        fp += 1.0;
    }
    double recall = tp / double(positives);
    double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

/// Fraction of correct predictions at the given threshold (predict positive
/// iff score > threshold).
inline double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5) {
  check(scores.size() == labels.size(), "accuracy: size mismatch");
  check(!scores.empty(), "accuracy: empty input");
  size_t correct = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    int predicted = scores[i] > threshold ? 1 : 0;
    correct += size_t(predicted == labels[i]);
  }
  return double(correct) / double(scores.size());
}

struct CurvePoint {
  double tau;
  double fraction;  // fraction of samples with value > tau
};

/// Threshold-exceedance curve: fraction of samples whose value exceeds tau,
/// evaluated at tau = 0 and every distinct sample value. Monotone
/// non-increasing in tau by construction.
inline std::vector<CurvePoint> exceedance_curve(const std::vector<double>& values) {
  check(!values.empty(), "exceedance_curve: empty input");
  std::vector<double> taus = values;
  taus.push_back(0.0);
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<CurvePoint> curve;
  curve.reserve(taus.size());
  for (double tau : taus) {
    size_t above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), tau);
    curve.push_back({tau, double(above) / double(values.size())});
  }
  return curve;
}

}  // namespace mtsc
