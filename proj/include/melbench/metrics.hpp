// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace melbench {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t n = 0) : n_classes(n), counts(n * n, 0) {}
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * n_classes + predicted]; }
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * n_classes + predicted]; }
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t total() const;
};

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions, std::size_t n_classes);

/// counts[c][c] / row_sum(c) per class; throws if a class has no samples.
std::vector<double> per_class_recall(const ConfusionMatrix& cm);
/// Unweighted average recall: the mean of per_class_recall.
double uar(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are predicted positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last, one point per distinct score
  double auc = 0.0;
};

/// Binary ROC; tied scores enter the positive set together.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_auc(const std::vector<RocPoint>& points);

std::string format_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          std::optional<double> auc);
std::string format_confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);
std::string format_roc_csv(const RocCurve& roc);

}  // namespace melbench
