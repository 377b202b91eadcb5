#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ranges>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clustids/dataset.hpp"
#include "clustids/error.hpp"

namespace clustids {

namespace detail {

// Maps arbitrary hashable values to dense ids 0..m-1 in first-seen order.
template <std::ranges::input_range R>
std::vector<int> dense_ids(const R& values, int* distinct = nullptr) {
  using V = std::ranges::range_value_t<R>;
  std::unordered_map<V, int> ids;
  std::vector<int> out;
  for (const auto& v : values) {
    auto [it, inserted] = ids.emplace(v, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  if (distinct) *distinct = static_cast<int>(ids.size());
  return out;
}

inline double entropy_of_counts(std::span<const std::size_t> counts, std::size_t total) {
  if (total == 0) return 0.0;
  double h = 0.0;
  const double n = static_cast<double>(total);
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

// H(Y) and H(Y|X) from dense label ids and dense bin ids.
inline std::pair<double, double> entropies(std::span<const int> y, int ny, std::span<const int> x, int nx) {
  std::vector<std::size_t> table(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), 0);
  std::vector<std::size_t> y_count(static_cast<std::size_t>(ny), 0);
  std::vector<std::size_t> x_count(static_cast<std::size_t>(nx), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    ++table[static_cast<std::size_t>(x[i]) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(y[i])];
    ++y_count[static_cast<std::size_t>(y[i])];
    ++x_count[static_cast<std::size_t>(x[i])];
  }
  const double n = static_cast<double>(y.size());
  double h_cond = 0.0;
  for (int b = 0; b < nx; ++b) {
    const auto nb = x_count[static_cast<std::size_t>(b)];
    if (nb == 0) continue;
    std::span<const std::size_t> row(table.data() + static_cast<std::size_t>(b) * static_cast<std::size_t>(ny),
                                     static_cast<std::size_t>(ny));
    h_cond += static_cast<double>(nb) / n * entropy_of_counts(row, nb);
  }
  return {entropy_of_counts(y_count, y.size()), h_cond};
}

}  // namespace detail

// Shannon entropy in bits of the empirical label distribution.
template <std::ranges::input_range R>
double entropy(const R& labels) {
  int m = 0;
  const auto ids = detail::dense_ids(labels, &m);
  if (ids.empty()) throw Error("entropy: empty input");
  std::vector<std::size_t> counts(static_cast<std::size_t>(m), 0);
  for (int id : ids) ++counts[static_cast<std::size_t>(id)];
  return detail::entropy_of_counts(counts, ids.size());
}

// H(Y|X): bin-weighted average of the label entropy within each bin.
template <std::ranges::input_range RY, std::ranges::input_range RX>
double conditional_entropy(const RY& labels, const RX& bins) {
  int ny = 0;
  int nx = 0;
  const auto y = detail::dense_ids(labels, &ny);
  const auto x = detail::dense_ids(bins, &nx);
  if (y.size() != x.size()) throw Error("conditional_entropy: length mismatch");
  if (y.empty()) throw Error("conditional_entropy: empty input");
  return detail::entropies(y, ny, x, nx).second;
}

// IG(Y, X) = H(Y) - H(Y|X) for an already discrete X (cluster ids, bins).
template <std::ranges::input_range RY, std::ranges::input_range RX>
double information_gain_discrete(const RY& labels, const RX& values) {
  int ny = 0;
  int nx = 0;
  const auto y = detail::dense_ids(labels, &ny);
  const auto x = detail::dense_ids(values, &nx);
  if (y.size() != x.size()) throw Error("information_gain: length mismatch");
  if (y.empty()) throw Error("information_gain: empty input");
  const auto [hy, hyx] = detail::entropies(y, ny, x, nx);
  return std::max(0.0, hy - hyx);
}

enum class BinStrategy { EqualWidth, Quantile };

struct Binning {
  BinStrategy strategy = BinStrategy::EqualWidth;
  int bin_count = 10;

  void validate() const {
    if (bin_count < 2) throw Error("binning: bin_count must be >= 2");
  }
};

// Discretizes a continuous column. Equal-width bins span the finite range;
// quantile bins cut at empirical quantiles. Non-finite values share bin 0.
inline std::vector<int> discretize(std::span<const double> values, const Binning& binning) {
  binning.validate();
  std::vector<int> bins(values.size(), 0);
  if (values.empty()) return bins;
  const int b = binning.bin_count;

  if (binning.strategy == BinStrategy::EqualWidth) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (!(hi > lo)) return bins;
    const double width = (hi - lo) / b;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) continue;
      const auto k = static_cast<int>(std::floor((values[i] - lo) / width));
      bins[i] = std::clamp(k, 0, b - 1);
    }
    return bins;
  }

  std::vector<double> sorted;
  sorted.reserve(values.size());
  for (double v : values) {
    if (std::isfinite(v)) sorted.push_back(v);
  }
  if (sorted.empty()) return bins;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  for (int q = 1; q < b; ++q) {
    const std::size_t pos = sorted.size() * static_cast<std::size_t>(q) / static_cast<std::size_t>(b);
    const double e = sorted[std::min(pos, sorted.size() - 1)];
    if (e > sorted.front() && (edges.empty() || e > edges.back())) edges.push_back(e);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    bins[i] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), values[i]) - edges.begin());
  }
  return bins;
}

// IG of a continuous feature after discretization.
template <std::ranges::input_range RY>
double information_gain(const RY& labels, std::span<const double> feature_values, const Binning& binning) {
  if (static_cast<std::size_t>(std::ranges::distance(labels)) != feature_values.size()) {
    throw Error("information_gain: length mismatch");
  }
  return information_gain_discrete(labels, discretize(feature_values, binning));
}

struct FeatureScore {
  std::string name;
  double score = 0.0;  // bits

  bool operator==(const FeatureScore&) const = default;
};

// Features ordered by score descending, ties by name ascending.
struct FeatureRanking {
  std::vector<FeatureScore> entries;

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << "feature,score\n";
    out.precision(17);
    for (const auto& e : entries) {
      out << '"' << e.name << "\"," << e.score << '\n';
    }
  }
};

inline FeatureRanking rank_features(const FlowDataset& d, const Binning& binning = {}) {
  if (d.empty()) throw Error("rank_features: empty dataset");
  binning.validate();
  const auto enc = encode_labels(std::span<const std::string>(d.labels));
  const int ny = static_cast<int>(enc.classes.size());
  FeatureRanking r;
  std::vector<double> column(d.size());
  for (Eigen::Index j = 0; j < d.rows.cols(); ++j) {
    for (Eigen::Index i = 0; i < d.rows.rows(); ++i) column[static_cast<std::size_t>(i)] = d.rows(i, j);
    const auto bins = discretize(column, binning);
    const int nx = binning.bin_count;
    const auto [hy, hyx] = detail::entropies(enc.codes, ny, bins, nx);
    r.entries.push_back({d.schema.feature_names[static_cast<std::size_t>(j)], std::max(0.0, hy - hyx)});
  }
  std::sort(r.entries.begin(), r.entries.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.name < b.name;
  });
  return r;
}

// Names scoring at least `threshold`, in ranking order.
inline std::vector<std::string> filter_by_threshold(const FeatureRanking& r, double threshold) {
  if (!(threshold >= 0.0)) throw Error("filter_by_threshold: threshold must be >= 0");
  std::vector<std::string> out;
  for (const auto& e : r.entries) {
    if (e.score >= threshold) out.push_back(e.name);
  }
  return out;
}

}  // namespace clustids
