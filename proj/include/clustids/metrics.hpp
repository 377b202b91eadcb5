#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "clustids/error.hpp"

namespace clustids {

// counts[t][p]: rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> counts;

  std::size_t size() const noexcept { return classes.size(); }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
  }

  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

// Tallies class-index pairs; indices must lie in [0, classes.size()).
inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted,
                                 std::vector<std::string> classes) {
  if (truth.size() != predicted.size()) throw Error("confusion: length mismatch");
  const std::size_t k = classes.size();
  ConfusionMatrix cm{std::move(classes), std::vector<std::vector<std::uint64_t>>(k, std::vector<std::uint64_t>(k, 0))};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= k || predicted[i] < 0 ||
        static_cast<std::size_t>(predicted[i]) >= k) {
      throw Error("confusion: label index outside the class list at row " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return cm;
}

inline ConfusionMatrix confusion(std::span<const std::string> truth, std::span<const std::string> predicted,
                                 std::vector<std::string> classes) {
  if (truth.size() != predicted.size()) throw Error("confusion: length mismatch");
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], static_cast<int>(i));
  auto lookup = [&index](const std::string& s) {
    auto it = index.find(s);
    if (it == index.end()) throw Error("confusion: label '" + s + "' is not in the class list");
    return it->second;
  };
  std::vector<int> t;
  std::vector<int> p;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    t.push_back(lookup(truth[i]));
    p.push_back(lookup(predicted[i]));
  }
  return confusion(t, p, std::move(classes));
}

struct ClassMetrics {
  std::string name;
  std::uint64_t support = 0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fpr = 0.0;
  double f1 = 0.0;
  // Set when a ratio had a zero denominator and was reported as 0.
  bool zero_division = false;

  bool operator==(const ClassMetrics&) const = default;
};

struct AveragedMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;

  bool operator==(const AveragedMetrics&) const = default;
};

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;

  bool operator==(const RocPoint&) const = default;
};

struct RocCurve {
  std::vector<RocPoint> points;
  std::optional<double> auc;  // absent when the class has no positives or no negatives

  bool operator==(const RocCurve&) const = default;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  AveragedMetrics weighted;  // support-weighted
  AveragedMetrics macro;
  double accuracy = 0.0;
  std::uint64_t total = 0;
  bool zero_division = false;
  std::vector<RocCurve> roc;  // one per class when probabilities were supplied

  bool operator==(const MetricsReport&) const = default;
};

// One-vs-all precision, recall, FPR and F1 per class, plus averages and accuracy.
// Zero denominators yield 0 and raise the zero_division flag.
inline MetricsReport per_class_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  const std::uint64_t total = cm.total();
  if (k == 0 || total == 0) throw Error("metrics: empty confusion matrix");
  MetricsReport r;
  r.total = total;
  auto ratio = [&r](std::uint64_t num, std::uint64_t den, ClassMetrics& m) {
    if (den == 0) {
      m.zero_division = true;
      r.zero_division = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    m.name = cm.classes[c];
    m.tp = cm.counts[c][c];
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.counts[c][j];
      col += cm.counts[j][c];
    }
    m.support = row;
    m.fn = row - m.tp;
    m.fp = col - m.tp;
    m.tn = total - m.tp - m.fn - m.fp;
    m.precision = ratio(m.tp, m.tp + m.fp, m);
    m.recall = ratio(m.tp, m.tp + m.fn, m);
    m.fpr = ratio(m.fp, m.tn + m.fp, m);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1 = 0.0;
      m.zero_division = true;
      r.zero_division = true;
    }
    r.per_class.push_back(m);
  }
  for (const auto& m : r.per_class) {
    const double w = static_cast<double>(m.support) / static_cast<double>(total);
    r.weighted.precision += w * m.precision;
    r.weighted.recall += w * m.recall;
    r.weighted.f1 += w * m.f1;
    r.weighted.fpr += w * m.fpr;
    r.macro.precision += m.precision / static_cast<double>(k);
    r.macro.recall += m.recall / static_cast<double>(k);
    r.macro.f1 += m.f1 / static_cast<double>(k);
    r.macro.fpr += m.fpr / static_cast<double>(k);
  }
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  return r;
}

// One-vs-all ROC for class c, one point per distinct score threshold
// (descending), starting at (0, 0). AUC by the trapezoid rule.
inline RocCurve roc_auc(std::span<const int> truth, const Eigen::MatrixXd& probabilities, int c) {
  if (static_cast<std::size_t>(probabilities.rows()) != truth.size()) throw Error("roc: length mismatch");
  if (c < 0 || c >= probabilities.cols()) throw Error("roc: class index outside the class list");
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probabilities(static_cast<Eigen::Index>(a), c) > probabilities(static_cast<Eigen::Index>(b), c); });
  std::uint64_t pos = 0;
  for (int t : truth) pos += t == c;
  const std::uint64_t neg = n - pos;

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < n;) {
    const double score = probabilities(static_cast<Eigen::Index>(order[i]), c);
    const std::uint64_t tp0 = tp;
    const std::uint64_t fp0 = fp;
    while (i < n && probabilities(static_cast<Eigen::Index>(order[i]), c) == score) {
      (truth[order[i]] == c ? tp : fp) += 1;
      ++i;
    }
    const double tpr = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
    const double fpr = neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0;
    curve.points.push_back({score, fpr, tpr});
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) / 2.0;
  }
  if (pos > 0 && neg > 0) curve.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

}  // namespace clustids
