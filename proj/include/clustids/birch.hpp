#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clustids/cf.hpp"
#include "clustids/cluster_model.hpp"
#include "clustids/dataset.hpp"
#include "clustids/error.hpp"

namespace clustids {

struct BirchParams {
  double threshold = 0.5;
  std::size_t branching_factor = 50;
  std::size_t n_clusters = 3;

  void validate() const {
    if (!(threshold > 0.0)) throw Error("birch: threshold must be > 0");
    if (branching_factor < 2) throw Error("birch: branching_factor must be >= 2");
    if (n_clusters < 1) throw Error("birch: n_clusters must be >= 1");
  }
};

namespace detail {

inline double sq_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

}  // namespace detail

// Height-balanced CF-tree. Nodes live in one vector and refer to children by index.
class CfTree {
 public:
  struct Entry {
    ClusteringFeature cf;
    std::vector<double> centroid;  // cached cf.ls / cf.n
    int child = -1;                // -1 on leaves
  };

  struct Node {
    bool leaf = true;
    std::vector<Entry> entries;
  };

  CfTree(std::size_t dim, double threshold, std::size_t branching_factor)
      : dim_(dim), threshold_(threshold), branching_(branching_factor) {
    nodes_.push_back(Node{});
  }

  void insert(std::span<const double> x) {
    if (x.size() != dim_) throw Error("birch: point dimension mismatch");
    auto point = ClusteringFeature::of_point(x);
    if (auto split = insert_into(root_, point, x)) {
      Node root;
      root.leaf = false;
      root.entries.push_back(std::move(split->first));
      root.entries.push_back(std::move(split->second));
      nodes_.push_back(std::move(root));
      root_ = static_cast<int>(nodes_.size() - 1);
    }
  }

  // Leaf subclusters, left to right.
  std::vector<ClusteringFeature> leaf_subclusters() const {
    std::vector<ClusteringFeature> out;
    collect(root_, out);
    return out;
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int root() const noexcept { return root_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t branching_factor() const noexcept { return branching_; }

 private:
  using SplitResult = std::optional<std::pair<Entry, Entry>>;

  static void refresh(Entry& e) {
    e.centroid = e.cf.ls;
    for (double& v : e.centroid) v /= static_cast<double>(e.cf.n);
  }

  static std::size_t closest(const std::vector<Entry>& entries, std::span<const double> x) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const double d = detail::sq_distance(entries[i].centroid, x);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  SplitResult insert_into(int node_id, const ClusteringFeature& point, std::span<const double> x) {
    auto& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.leaf) {
      if (!node.entries.empty()) {
        auto& e = node.entries[closest(node.entries, x)];
        auto merged = cf_merge(e.cf, point);
        if (cf_radius(merged) <= threshold_) {
          e.cf = std::move(merged);
          refresh(e);
          return std::nullopt;
        }
      }
      Entry fresh{point, std::vector<double>(x.begin(), x.end()), -1};
      node.entries.push_back(std::move(fresh));
    } else {
      const std::size_t at = closest(node.entries, x);
      const int child = node.entries[at].child;
      auto split = insert_into(child, point, x);
      // insert_into may have grown nodes_, so re-fetch the reference.
      auto& self = nodes_[static_cast<std::size_t>(node_id)];
      if (!split) {
        self.entries[at].cf += point;
        refresh(self.entries[at]);
        return std::nullopt;
      }
      self.entries[at] = std::move(split->first);
      self.entries.push_back(std::move(split->second));
    }
    if (nodes_[static_cast<std::size_t>(node_id)].entries.size() > branching_) return split_node(node_id);
    return std::nullopt;
  }

  // Farthest pair of entries seeds two nodes; every other entry joins the nearer seed.
  SplitResult split_node(int node_id) {
    Node& node = nodes_[static_cast<std::size_t>(node_id)];
    auto entries = std::move(node.entries);
    node.entries.clear();
    std::size_t s1 = 0;
    std::size_t s2 = 1;
    double far = -1.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      for (std::size_t j = i + 1; j < entries.size(); ++j) {
        const double d = detail::sq_distance(entries[i].centroid, entries[j].centroid);
        if (d > far) {
          far = d;
          s1 = i;
          s2 = j;
        }
      }
    }
    const auto seed1 = entries[s1].centroid;
    const auto seed2 = entries[s2].centroid;
    Node left{node.leaf, {}};
    Node right{node.leaf, {}};
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (i == s1) {
        left.entries.push_back(std::move(entries[i]));
      } else if (i == s2) {
        right.entries.push_back(std::move(entries[i]));
      } else {
        const double d1 = detail::sq_distance(entries[i].centroid, seed1);
        const double d2 = detail::sq_distance(entries[i].centroid, seed2);
        (d1 <= d2 ? left : right).entries.push_back(std::move(entries[i]));
      }
    }
    auto summarize = [this](const Node& n, int id) {
      Entry e{ClusteringFeature::zero(dim_), {}, id};
      for (const auto& child : n.entries) e.cf += child.cf;
      refresh(e);
      return e;
    };
    nodes_[static_cast<std::size_t>(node_id)] = std::move(left);
    nodes_.push_back(std::move(right));
    const int right_id = static_cast<int>(nodes_.size() - 1);
    return std::make_pair(summarize(nodes_[static_cast<std::size_t>(node_id)], node_id),
                          summarize(nodes_[static_cast<std::size_t>(right_id)], right_id));
  }

  void collect(int node_id, std::vector<ClusteringFeature>& out) const {
    const auto& node = nodes_[static_cast<std::size_t>(node_id)];
    for (const auto& e : node.entries) {
      if (node.leaf) {
        out.push_back(e.cf);
      } else {
        collect(e.child, out);
      }
    }
  }

  std::size_t dim_;
  double threshold_;
  std::size_t branching_;
  std::vector<Node> nodes_;
  int root_ = 0;
};

namespace detail {

// Weighted centroid-linkage agglomeration of subclusters down to `target` groups.
// Returns, for every subcluster, the index of the group it ends up in; groups are
// numbered by their lowest member subcluster.
inline std::vector<int> agglomerate(const std::vector<ClusteringFeature>& subclusters, std::size_t target) {
  const std::size_t m = subclusters.size();
  std::vector<std::vector<double>> centroid(m);
  std::vector<double> weight(m);
  for (std::size_t i = 0; i < m; ++i) {
    centroid[i] = subclusters[i].centroid();
    weight[i] = static_cast<double>(subclusters[i].n);
  }
  std::vector<int> parent(m);
  for (std::size_t i = 0; i < m; ++i) parent[i] = static_cast<int>(i);
  std::vector<char> active(m, 1);
  std::vector<std::size_t> nn(m, 0);
  std::vector<double> nn_d(m, std::numeric_limits<double>::infinity());

  auto recompute = [&](std::size_t i) {
    nn_d[i] = std::numeric_limits<double>::infinity();
    nn[i] = i;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || !active[j]) continue;
      const double d = sq_distance(centroid[i], centroid[j]);
      if (d < nn_d[i]) {
        nn_d[i] = d;
        nn[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < m; ++i) recompute(i);

  for (std::size_t groups = m; groups > target; --groups) {
    std::size_t a = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (!active[i]) continue;
      if (a == m || nn_d[i] < nn_d[a]) a = i;
    }
    std::size_t b = nn[a];
    if (b < a) std::swap(a, b);
    // Merge b into a.
    const double w = weight[a] + weight[b];
    for (std::size_t c = 0; c < centroid[a].size(); ++c) {
      centroid[a][c] = (weight[a] * centroid[a][c] + weight[b] * centroid[b][c]) / w;
    }
    weight[a] = w;
    active[b] = 0;
    parent[b] = static_cast<int>(a);
    recompute(a);
    for (std::size_t i = 0; i < m; ++i) {
      if (!active[i] || i == a) continue;
      if (nn[i] == a || nn[i] == b) {
        recompute(i);
      } else {
        const double d = sq_distance(centroid[i], centroid[a]);
        if (d < nn_d[i] || (d == nn_d[i] && a < nn[i])) {
          nn_d[i] = d;
          nn[i] = a;
        }
      }
    }
  }

  std::vector<int> root(m);
  for (std::size_t i = 0; i < m; ++i) {
    int r = static_cast<int>(i);
    while (parent[static_cast<std::size_t>(r)] != r) r = parent[static_cast<std::size_t>(r)];
    root[i] = r;
  }
  // Renumber roots densely in order of first appearance (= lowest member).
  std::vector<int> dense(m, -1);
  int next = 0;
  std::vector<int> group(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto& d = dense[static_cast<std::size_t>(root[i])];
    if (d < 0) d = next++;
    group[i] = d;
  }
  return group;
}

}  // namespace detail

// One pass over the rows builds the CF-tree; the leaf subclusters are then merged
// down to n_clusters. Centroids are the count-weighted means of each final group.
inline ClusterFit birch_fit(const Matrix& x, const BirchParams& p) {
  p.validate();
  if (x.rows() == 0) throw Error("birch: empty input");
  if (!x.allFinite()) throw Error("birch: input contains non-finite values");
  const auto dim = static_cast<std::size_t>(x.cols());
  CfTree tree(dim, p.threshold, p.branching_factor);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    tree.insert(std::span<const double>(x.row(i).data(), dim));
  }
  const auto subclusters = tree.leaf_subclusters();

  ClusterFit fit;
  fit.subclusters = subclusters.size();
  const std::size_t k = std::min(p.n_clusters, subclusters.size());
  fit.reduced_k = k < p.n_clusters;
  const auto group = detail::agglomerate(subclusters, k);

  std::vector<ClusteringFeature> merged(k, ClusteringFeature::zero(dim));
  for (std::size_t s = 0; s < subclusters.size(); ++s) merged[static_cast<std::size_t>(group[s])] += subclusters[s];

  fit.model.algorithm = ClusterAlgorithm::Birch;
  fit.model.centroids.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < k; ++c) {
    const auto centroid = merged[c].centroid();
    for (std::size_t j = 0; j < dim; ++j) {
      fit.model.centroids(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = centroid[j];
    }
  }
  fit.model.params = {{"threshold", p.threshold},
                      {"branching_factor", p.branching_factor},
                      {"n_clusters", p.n_clusters},
                      {"subclusters", subclusters.size()}};
  fit.assignment = assign(fit.model, x);
  return fit;
}

}  // namespace clustids
