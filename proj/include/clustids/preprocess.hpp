#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "clustids/dataset.hpp"
#include "clustids/error.hpp"
#include "clustids/rng.hpp"

namespace clustids {

struct UndersampleResult {
  FlowDataset data;
  // Set when the majority class already had no more rows than all others combined.
  bool unchanged = false;
};

// Randomly drops majority-class rows until the majority count equals the sum of
// all other class counts. Surviving rows keep their original order.
inline UndersampleResult undersample_majority(const FlowDataset& d, const std::string& majority_class,
                                              std::uint64_t seed) {
  std::vector<std::size_t> majority;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] == majority_class) majority.push_back(i);
  }
  if (majority.empty()) throw Error("undersample: class '" + majority_class + "' not present");
  const std::size_t others = d.size() - majority.size();
  if (majority.size() <= others) return {d, true};

  // Partial Fisher-Yates: the first `others` slots become a uniform sample.
  Rng rng(seed);
  for (std::size_t i = 0; i < others; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(majority.size() - i));
    std::swap(majority[i], majority[j]);
  }
  std::vector<char> keep(d.size(), 1);
  for (std::size_t i = others; i < majority.size(); ++i) keep[majority[i]] = 0;
  std::vector<std::size_t> rows;
  rows.reserve(2 * others);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i]) rows.push_back(i);
  }
  return {d.subset(rows), false};
}

// Per-feature min/max learned from a training split.
struct Scaler {
  std::vector<std::string> feature_names;
  std::vector<double> min;
  std::vector<double> max;

  static Scaler fit(const FlowDataset& train) {
    if (train.empty()) throw Error("scaler: cannot fit on an empty dataset");
    Scaler s;
    s.feature_names = train.schema.feature_names;
    const Eigen::RowVectorXd lo = train.rows.colwise().minCoeff();
    const Eigen::RowVectorXd hi = train.rows.colwise().maxCoeff();
    s.min.assign(lo.data(), lo.data() + lo.size());
    s.max.assign(hi.data(), hi.data() + hi.size());
    return s;
  }

  // (x - min) / (max - min) clamped to [0, 1]; constant features map to 0.
  FlowDataset apply(const FlowDataset& d) const {
    if (d.schema.feature_names != feature_names) throw Error("scaler: schema mismatch");
    FlowDataset out = d;
    for (Eigen::Index j = 0; j < out.rows.cols(); ++j) {
      const double lo = min[static_cast<std::size_t>(j)];
      const double span = max[static_cast<std::size_t>(j)] - lo;
      auto col = out.rows.col(j);
      if (!(span > 0.0)) {
        col.setZero();
        continue;
      }
      for (Eigen::Index i = 0; i < col.size(); ++i) {
        col(i) = std::clamp((col(i) - lo) / span, 0.0, 1.0);
      }
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"kind", "minmax"}, {"features", feature_names}, {"min", min}, {"max", max}};
  }

  static Scaler from_json(const nlohmann::json& j) {
    Scaler s;
    j.at("features").get_to(s.feature_names);
    j.at("min").get_to(s.min);
    j.at("max").get_to(s.max);
    if (s.min.size() != s.feature_names.size() || s.max.size() != s.feature_names.size()) {
      throw Error("scaler: inconsistent vector lengths");
    }
    return s;
  }
};

struct SplitSpec {
  std::array<double, 3> ratios{0.8, 0.1, 0.1};  // train, validation, test
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0.0;
    for (double r : ratios) {
      if (!(r >= 0.0)) throw Error("split: ratios must be non-negative");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("split: ratios must sum to 1");
  }

  nlohmann::json to_json() const { return {{"ratios", ratios}, {"seed", seed}}; }
  static SplitSpec from_json(const nlohmann::json& j) {
    SplitSpec s;
    j.at("ratios").get_to(s.ratios);
    j.at("seed").get_to(s.seed);
    s.validate();
    return s;
  }
};

namespace detail {

// Distributes `total` over parts proportionally to `weights` (summing to `weight_sum`):
// floors first, then one extra unit per part in order of largest fractional remainder,
// ties going to the larger weight and then to the lower index.
inline std::vector<std::size_t> largest_remainder(const std::vector<std::size_t>& weights, std::size_t weight_sum,
                                                  std::size_t total) {
  std::vector<std::size_t> out(weights.size(), 0);
  if (weight_sum == 0) return out;
  // Remainders share the denominator weight_sum, so they compare exactly as integers.
  std::vector<std::uint64_t> frac(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (total != 0 && weights[i] > std::numeric_limits<std::uint64_t>::max() / total) {
      throw Error("split: class sizes too large");
    }
    const std::uint64_t num = static_cast<std::uint64_t>(weights[i]) * total;
    out[i] = static_cast<std::size_t>(num / weight_sum);
    frac[i] = num % weight_sum;
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return weights[a] > weights[b];
  });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[order[r]];
  return out;
}

}  // namespace detail

// Per-class (train, validation, test) counts. Split totals are fixed first over the
// whole dataset (train = floor(n * r_train), validation takes the larger half of the
// held-out rows), then each total is shared across classes by largest remainder.
inline std::vector<std::array<std::size_t, 3>> split_quotas(const std::vector<std::size_t>& class_sizes,
                                                            const std::array<double, 3>& ratios) {
  const std::size_t n = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
  const auto train_total =
      std::min(n, static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[0] + 1e-9)));
  const std::size_t held_total = n - train_total;
  const double held_ratio = ratios[1] + ratios[2];
  std::size_t val_total = 0;
  if (held_ratio > 0.0) {
    val_total = std::min(
        held_total, static_cast<std::size_t>(std::ceil(static_cast<double>(held_total) * ratios[1] / held_ratio - 1e-9)));
  }

  const auto held = detail::largest_remainder(class_sizes, n, held_total);
  const auto val = detail::largest_remainder(held, held_total, val_total);
  std::vector<std::array<std::size_t, 3>> out(class_sizes.size());
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    out[c] = {class_sizes[c] - held[c], val[c], held[c] - val[c]};
  }
  return out;
}

struct Splits {
  FlowDataset train;
  FlowDataset validation;
  FlowDataset test;
};

// Stratified partition into train/validation/test. Within each class rows are
// shuffled under the seed before being dealt out; each split keeps input order.
inline Splits stratified_split(const FlowDataset& d, const SplitSpec& spec) {
  spec.validate();
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < d.labels.size(); ++i) by_class[d.labels[i]].push_back(i);

  std::vector<std::size_t> sizes;
  for (const auto& [name, idx] : by_class) sizes.push_back(idx.size());
  const auto quotas = split_quotas(sizes, spec.ratios);

  Rng rng(spec.seed);
  std::array<std::vector<std::size_t>, 3> parts;
  std::size_t c = 0;
  for (auto& [name, idx] : by_class) {
    rng.shuffle(std::span<std::size_t>(idx));
    std::size_t at = 0;
    for (int p = 0; p < 3; ++p) {
      parts[p].insert(parts[p].end(), idx.begin() + static_cast<std::ptrdiff_t>(at),
                      idx.begin() + static_cast<std::ptrdiff_t>(at + quotas[c][p]));
      at += quotas[c][p];
    }
    ++c;
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return {d.subset(parts[0]), d.subset(parts[1]), d.subset(parts[2])};
}

}  // namespace clustids
