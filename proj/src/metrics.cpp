// SPDX-License-Identifier: Apache-2.0
#include "melbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "melbench/error.hpp"

namespace melbench {

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_classes; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions, std::size_t n_classes) {
  if (labels.size() != predictions.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(labels.size()) + " labels vs " +
                                std::to_string(predictions.size()) + " predictions");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i];
    const int p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= n_classes || static_cast<std::size_t>(p) >= n_classes) {
      throw std::out_of_range("confusion: pair (" + std::to_string(t) + ", " + std::to_string(p) +
                              ") outside " + std::to_string(n_classes) + " classes");
    }
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return cm;
}

std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
  std::vector<double> recall(cm.n_classes);
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const std::uint64_t row = cm.row_sum(c);
    if (row == 0) throw InputError("recall undefined: class " + std::to_string(c) + " has no samples");
    recall[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
  }
  return recall;
}

double uar(const ConfusionMatrix& cm) {
  if (cm.n_classes == 0) throw InputError("uar of an empty confusion matrix");
  const auto recall = per_class_recall(cm);
  return std::accumulate(recall.begin(), recall.end(), 0.0) / static_cast<double>(recall.size());
}

double trapezoid_auc(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  }
  return area;
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_curve: scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::out_of_range("roc_curve: label " + std::to_string(l) + " not in {0, 1}");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw InputError("roc_curve needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (labels[order[i]] == 1) ++tp;
      else ++fp;
      ++i;
    }
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), threshold});
  }
  roc.auc = trapezoid_auc(roc.points);
  return roc;
}

std::string format_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          std::optional<double> auc) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  const auto recall = per_class_recall(cm);
  os << "samples: " << cm.total() << '\n';
  os << "uar: " << uar(cm) << '\n';
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    os << "recall[" << (c < class_names.size() ? class_names[c] : std::to_string(c)) << "]: " << recall[c] << '\n';
  }
  if (auc) os << "auc: " << *auc << '\n';
  os << "confusion (rows = true, cols = predicted):\n";
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    os << ' ';
    for (std::size_t p = 0; p < cm.n_classes; ++p) os << ' ' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

std::string format_confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  auto name = [&](std::size_t c) { return c < class_names.size() ? class_names[c] : std::to_string(c); };
  std::ostringstream os;
  os << "true\\predicted";
  for (std::size_t p = 0; p < cm.n_classes; ++p) os << ',' << name(p);
  os << '\n';
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    os << name(t);
    for (std::size_t p = 0; p < cm.n_classes; ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

std::string format_roc_csv(const RocCurve& roc) {
  std::ostringstream os;
  os.precision(17);
  os << "fpr,tpr,threshold\n";
  for (const auto& p : roc.points) os << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
  return os.str();
}

}  // namespace melbench
