// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "melbench/error.hpp"
#include "melbench/metrics.hpp"
#include "melbench/rng.hpp"

using namespace melbench;

namespace {

// Recall per class counted straight from label/prediction pairs.
double brute_force_uar(const std::vector<int>& labels, const std::vector<int>& preds, int n_classes) {
  double total = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    int hit = 0, n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      ++n;
      hit += preds[i] == c;
    }
    total += static_cast<double>(hit) / n;
  }
  return total / n_classes;
}

// P(score_pos > score_neg) + 0.5 P(tie) over every positive/negative pair.
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("confusion: diagonal, empty, totals, range errors") {
  std::vector<int> l{0, 1, 2, 2, 1};
  auto cm = confusion(l, l, 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t p = 0; p < 3; ++p) CHECK((cm.at(t, p) != 0) == (t == p));
  CHECK(uar(cm) == 1.0);

  auto empty = confusion({}, {}, 4);
  CHECK(empty.total() == 0);
  CHECK(empty.counts == std::vector<std::uint64_t>(16, 0));

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = rng.uniform_int(50);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.uniform_int(4));
      b[i] = static_cast<int>(rng.uniform_int(4));
    }
    CHECK(confusion(a, b, 4).total() == n);
  }
  std::vector<int> bad{0, 3};
  std::vector<int> ok{0, 1};
  CHECK_THROWS_AS(confusion(bad, ok, 3), std::out_of_range);
  CHECK_THROWS(confusion(ok, std::vector<int>{0}, 3));
}

TEST_CASE("uar: binary equation and undefined recall") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 50;  // TN
  cm.at(0, 1) = 50;  // FP
  cm.at(1, 0) = 0;   // FN
  cm.at(1, 1) = 100; // TP
  CHECK(uar(cm) == 0.75);
  ConfusionMatrix hole(3);
  hole.at(0, 0) = 1;
  hole.at(2, 2) = 1;
  CHECK_THROWS_AS(uar(hole), InputError);
}

TEST_CASE("uar matches brute-force recall on random five-class data") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> labels, preds;
    for (int c = 0; c < 5; ++c) {
      const std::size_t n = 1 + rng.uniform_int(30);
      for (std::size_t i = 0; i < n; ++i) {
        labels.push_back(c);
        preds.push_back(static_cast<int>(rng.uniform_int(5)));
      }
    }
    CHECK(uar(confusion(labels, preds, 5)) == doctest::Approx(brute_force_uar(labels, preds, 5)).epsilon(1e-15));
  }
}

TEST_CASE("uar: duplication invariance, constant predictor, sensitivity/specificity") {
  Rng rng(3);
  std::vector<int> labels, preds;
  for (int i = 0; i < 60; ++i) {
    labels.push_back(static_cast<int>(rng.uniform_int(3)));
    preds.push_back(static_cast<int>(rng.uniform_int(3)));
  }
  labels.insert(labels.end(), {0, 1, 2});
  preds.insert(preds.end(), {0, 1, 2});
  const double base = uar(confusion(labels, preds, 3));
  std::vector<int> dl, dp;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int k = 1 + labels[i];  // class c duplicated c+1 times
    for (int r = 0; r < k; ++r) {
      dl.push_back(labels[i]);
      dp.push_back(preds[i]);
    }
  }
  CHECK(uar(confusion(dl, dp, 3)) == doctest::Approx(base).epsilon(1e-15));

  for (int n : {2, 3, 5, 7}) {
    std::vector<int> l, p;
    for (int c = 0; c < n; ++c)
      for (int r = 0; r <= c; ++r) {
        l.push_back(c);
        p.push_back(0);
      }
    CHECK(uar(confusion(l, p, static_cast<std::size_t>(n))) == 1.0 / n);
  }

  ConfusionMatrix cm(2);
  cm.at(0, 0) = 30;
  cm.at(0, 1) = 10;
  cm.at(1, 0) = 7;
  cm.at(1, 1) = 13;
  const double sensitivity = 13.0 / 20.0, specificity = 30.0 / 40.0;
  CHECK(uar(cm) == doctest::Approx((sensitivity + specificity) / 2.0).epsilon(1e-15));
  auto recall = per_class_recall(cm);
  CHECK(recall[0] == specificity);
  CHECK(recall[1] == sensitivity);
}

TEST_CASE("roc: separated, constant, endpoints, single-class error") {
  std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  std::vector<int> l{0, 0, 1, 1};
  auto roc = roc_curve(s, l);
  CHECK(roc.auc == 1.0);
  CHECK(roc.points.front().fpr == 0.0);
  CHECK(roc.points.front().tpr == 0.0);
  CHECK(roc.points.back().fpr == 1.0);
  CHECK(roc.points.back().tpr == 1.0);
  for (std::size_t i = 1; i < roc.points.size(); ++i) CHECK(roc.points[i].fpr >= roc.points[i - 1].fpr);

  std::vector<double> same(6, 0.3);
  std::vector<int> mixed{0, 1, 0, 1, 1, 0};
  auto flat = roc_curve(same, mixed);
  CHECK(flat.auc == 0.5);
  CHECK(flat.points.size() == 2);

  std::vector<int> one_class{1, 1, 1, 1};
  CHECK_THROWS_AS(roc_curve(s, one_class), InputError);
}

TEST_CASE("roc auc equals the pairwise oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(120);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.uniform_int(2));
      scores[i] = static_cast<double>(rng.uniform_int(10)) / 10.0 + 0.05 * labels[i];
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(std::abs(roc_curve(scores, labels).auc - pairwise_auc(scores, labels)) <= 1e-9);
  }
}

TEST_CASE("reports and csv") {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 3;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 2;
  auto report = format_report(cm, {"neg", "pos"}, 0.9);
  CHECK(report.find("uar") != std::string::npos);
  CHECK(report.find("auc") != std::string::npos);
  auto csv = format_confusion_csv(cm, {"neg", "pos"});
  CHECK(csv.find("neg") != std::string::npos);
  std::vector<double> s{0.1, 0.9};
  std::vector<int> l{0, 1};
  auto roc_csv = format_roc_csv(roc_curve(s, l));
  CHECK(roc_csv.rfind("fpr,tpr,threshold", 0) == 0);
}
