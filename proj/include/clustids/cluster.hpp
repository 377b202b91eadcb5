#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "clustids/birch.hpp"
#include "clustids/cf.hpp"
#include "clustids/cluster_model.hpp"
#include "clustids/dataset.hpp"
#include "clustids/featsel.hpp"
#include "clustids/kmeans.hpp"

namespace clustids {

// Algorithm choice plus per-algorithm parameters; k and seed are supplied per fit.
struct ClusterConfig {
  ClusterAlgorithm algorithm = ClusterAlgorithm::Birch;
  BirchParams birch;
  KMeansParams kmeans;

  ClusterFit fit(const Matrix& x, std::size_t k, std::uint64_t seed) const {
    if (algorithm == ClusterAlgorithm::Birch) {
      BirchParams p = birch;
      p.n_clusters = k;
      return birch_fit(x, p);
    }
    KMeansParams p = kmeans;
    p.k = k;
    p.seed = seed;
    return kmeans_fit(x, p);
  }
};

struct ElbowPoint {
  std::size_t k = 0;
  double score = 0.0;  // IG(classes; cluster ids) in bits
};

// Fits one clustering per k on the training rows and scores how much label
// entropy the cluster assignment removes.
inline std::vector<ElbowPoint> elbow_scan(const Matrix& x, std::span<const int> y, std::span<const std::size_t> k_values,
                                          const ClusterConfig& config, std::uint64_t seed) {
  if (k_values.empty()) throw Error("elbow: no k values");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw Error("elbow: rows and labels differ in length");
  std::vector<ElbowPoint> curve;
  for (std::size_t k : k_values) {
    const auto fit = config.fit(x, k, seed);
    curve.push_back({k, information_gain_discrete(y, fit.assignment)});
  }
  return curve;
}

// Knee candidates: interior points where the slope drops, ranked by the size of
// the drop (the negated second difference). Only local maxima with a positive
// drop are reported.
inline std::vector<std::size_t> suggest_elbows(std::span<const ElbowPoint> curve) {
  if (curve.size() < 3) return {};
  std::vector<double> drop(curve.size(), 0.0);
  for (std::size_t i = 1; i + 1 < curve.size(); ++i) {
    const double left = (curve[i].score - curve[i - 1].score) / static_cast<double>(curve[i].k - curve[i - 1].k);
    const double right = (curve[i + 1].score - curve[i].score) / static_cast<double>(curve[i + 1].k - curve[i].k);
    drop[i] = left - right;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 1; i + 1 < curve.size(); ++i) {
    const bool left_ok = i == 1 || drop[i] >= drop[i - 1];
    const bool right_ok = i + 2 == curve.size() || drop[i] > drop[i + 1];
    if (drop[i] > 1e-12 && left_ok && right_ok) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return drop[a] > drop[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i : idx) out.push_back(curve[i].k);
  return out;
}

inline void write_elbow_csv(const std::filesystem::path& path, std::span<const ElbowPoint> curve) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "k,score\n";
  for (const auto& p : curve) out << p.k << ',' << p.score << '\n';
}

enum class PseudoLabelEncoding { ScaledOrdinal, OneHot };

inline std::string to_string(PseudoLabelEncoding e) {
  return e == PseudoLabelEncoding::OneHot ? "one-hot" : "scaled-ordinal";
}

inline PseudoLabelEncoding parse_encoding(const std::string& s) {
  if (s == "scaled-ordinal" || s == "ordinal") return PseudoLabelEncoding::ScaledOrdinal;
  if (s == "one-hot" || s == "onehot") return PseudoLabelEncoding::OneHot;
  throw Error("unknown pseudo-label encoding '" + s + "'");
}

// Appends the cluster id as extra feature(s): either id / (k - 1) in one column
// named "cluster_id", or k indicator columns "cluster_0" .. "cluster_{k-1}".
inline FlowDataset augment(const FlowDataset& d, std::span<const int> cluster_ids, std::size_t k,
                           PseudoLabelEncoding encoding = PseudoLabelEncoding::ScaledOrdinal) {
  if (cluster_ids.size() != d.size()) throw Error("augment: cluster id count does not match row count");
  if (k < 1) throw Error("augment: k must be >= 1");
  for (int id : cluster_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= k) throw Error("augment: cluster id out of range");
  }
  FlowDataset out;
  out.schema = d.schema;
  out.labels = d.labels;
  const Eigen::Index base = d.rows.cols();
  const Eigen::Index extra = encoding == PseudoLabelEncoding::OneHot ? static_cast<Eigen::Index>(k) : 1;
  out.rows.resize(d.rows.rows(), base + extra);
  out.rows.leftCols(base) = d.rows;
  out.rows.rightCols(extra).setZero();
  if (encoding == PseudoLabelEncoding::OneHot) {
    for (std::size_t c = 0; c < k; ++c) out.schema.feature_names.push_back("cluster_" + std::to_string(c));
    for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
      out.rows(static_cast<Eigen::Index>(i), base + cluster_ids[i]) = 1.0;
    }
  } else {
    out.schema.feature_names.push_back("cluster_id");
    if (k > 1) {
      for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
        out.rows(static_cast<Eigen::Index>(i), base) = static_cast<double>(cluster_ids[i]) / static_cast<double>(k - 1);
      }
    }
  }
  out.schema.validate();
  return out;
}

}  // namespace clustids
