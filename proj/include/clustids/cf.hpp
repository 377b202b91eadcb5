#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "clustids/error.hpp"

namespace clustids {

// Birch clustering feature: point count, linear sum, and sum of squared norms.
// A default-constructed CF has no dimension and acts as the identity for merge.
struct ClusteringFeature {
  std::size_t n = 0;
  std::vector<double> ls;
  double ss = 0.0;

  static ClusteringFeature zero(std::size_t dim) { return {0, std::vector<double>(dim, 0.0), 0.0}; }

  static ClusteringFeature of_point(std::span<const double> x) {
    ClusteringFeature cf{1, std::vector<double>(x.begin(), x.end()), 0.0};
    for (double v : x) cf.ss += v * v;
    return cf;
  }

  std::size_t dim() const noexcept { return ls.size(); }

  std::vector<double> centroid() const {
    if (n == 0) throw Error("cf: centroid of an empty subcluster");
    std::vector<double> c(ls);
    for (double& v : c) v /= static_cast<double>(n);
    return c;
  }

  ClusteringFeature& operator+=(const ClusteringFeature& other) {
    if (other.n == 0 && other.ls.empty()) return *this;
    if (n == 0 && ls.empty()) {
      *this = other;
      return *this;
    }
    if (other.ls.size() != ls.size()) throw Error("cf: dimension mismatch");
    n += other.n;
    for (std::size_t i = 0; i < ls.size(); ++i) ls[i] += other.ls[i];
    ss += other.ss;
    return *this;
  }

  bool operator==(const ClusteringFeature&) const = default;
};

inline ClusteringFeature cf_merge(const ClusteringFeature& a, const ClusteringFeature& b) {
  ClusteringFeature out = a;
  out += b;
  return out;
}

// Root-mean-square distance of the subcluster's points to its centroid.
inline double cf_radius(const ClusteringFeature& cf) {
  if (cf.n == 0) throw Error("cf: radius of an empty subcluster");
  const double n = static_cast<double>(cf.n);
  double centroid_sq = 0.0;
  for (double v : cf.ls) centroid_sq += (v / n) * (v / n);
  return std::sqrt(std::max(0.0, cf.ss / n - centroid_sq));
}

}  // namespace clustids
