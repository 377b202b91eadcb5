#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "clustids/cluster_model.hpp"
#include "clustids/dataset.hpp"
#include "clustids/error.hpp"
#include "clustids/rng.hpp"

namespace clustids {

enum class KMeansInit { Random, PlusPlus };

struct KMeansParams {
  std::size_t k = 3;
  std::uint64_t seed = 0;
  std::size_t max_iter = 300;
  // Converged once no centroid coordinate moves by this much or more.
  double tolerance = 1e-6;
  KMeansInit init = KMeansInit::Random;
  // Independent restarts; the lowest final inertia wins.
  std::size_t n_init = 1;

  void validate() const {
    if (k < 1) throw Error("kmeans: k must be >= 1");
    if (max_iter < 1) throw Error("kmeans: max_iter must be >= 1");
    if (n_init < 1) throw Error("kmeans: n_init must be >= 1");
  }
};

namespace detail {

inline bool same_row(const Matrix& x, Eigen::Index a, const Matrix& c, Eigen::Index b) {
  return (x.row(a).array() == c.row(b).array()).all();
}

// k distinct rows chosen uniformly at random.
inline Matrix init_random(const Matrix& x, std::size_t k, Rng& rng) {
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  Matrix c(static_cast<Eigen::Index>(k), x.cols());
  std::size_t chosen = 0;
  // Lazy Fisher-Yates: draw until k distinct rows are found.
  for (std::size_t i = 0; i < order.size() && chosen < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.uniform_index(order.size() - i));
    std::swap(order[i], order[j]);
    const auto row = static_cast<Eigen::Index>(order[i]);
    bool duplicate = false;
    for (std::size_t q = 0; q < chosen && !duplicate; ++q) duplicate = same_row(x, row, c, static_cast<Eigen::Index>(q));
    if (duplicate) continue;
    c.row(static_cast<Eigen::Index>(chosen++)) = x.row(row);
  }
  if (chosen < k) throw Error("kmeans: fewer distinct rows than k");
  return c;
}

// k-means++ seeding: each new centroid drawn with probability proportional to
// the squared distance from the nearest centroid chosen so far.
inline Matrix init_plus_plus(const Matrix& x, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  Matrix c(static_cast<Eigen::Index>(k), x.cols());
  c.row(0) = x.row(static_cast<Eigen::Index>(rng.uniform_index(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (x.row(static_cast<Eigen::Index>(i)) - c.row(0)).squaredNorm();
  for (std::size_t m = 1; m < k; ++m) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (!(total > 0.0)) throw Error("kmeans: fewer distinct rows than k");
    double target = rng.uniform01() * total;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      pick = i;
      target -= d2[i];
      if (target < 0.0) break;
    }
    c.row(static_cast<Eigen::Index>(m)) = x.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - c.row(static_cast<Eigen::Index>(m))).squaredNorm());
    }
  }
  return c;
}

// Assigns every row; returns the inertia.
inline double assign_all(const Matrix& x, const Matrix& c, std::vector<int>& ids, std::vector<double>& dist) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double d = 0.0;
    ids[static_cast<std::size_t>(i)] = nearest_centroid(c, x.row(i).data(), &d);
    dist[static_cast<std::size_t>(i)] = d;
    inertia += d;
  }
  return inertia;
}

inline ClusterFit lloyd(const Matrix& x, Matrix centroids, const KMeansParams& p) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto k = static_cast<std::size_t>(centroids.rows());
  std::vector<int> ids(n);
  std::vector<double> dist(n);
  ClusterFit fit;
  fit.converged = false;
  for (std::size_t iter = 1; iter <= p.max_iter; ++iter) {
    fit.inertia_history.push_back(assign_all(x, centroids, ids, dist));
    fit.iterations = iter;

    std::vector<std::size_t> size(k, 0);
    for (int id : ids) ++size[static_cast<std::size_t>(id)];
    // An empty cluster takes over the point lying farthest from its own centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (size[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (size[static_cast<std::size_t>(ids[i])] < 2) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n) throw Error("kmeans: cannot re-seed an empty cluster");
      --size[static_cast<std::size_t>(ids[far])];
      ids[far] = static_cast<int>(c);
      dist[far] = 0.0;
      size[c] = 1;
    }

    Matrix next = Matrix::Zero(static_cast<Eigen::Index>(k), x.cols());
    for (std::size_t i = 0; i < n; ++i) next.row(ids[i]) += x.row(static_cast<Eigen::Index>(i));
    for (std::size_t c = 0; c < k; ++c) next.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(size[c]);

    const double moved = (next - centroids).cwiseAbs().maxCoeff();
    centroids = std::move(next);
    if (moved < p.tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.model.algorithm = ClusterAlgorithm::KMeans;
  fit.model.centroids = std::move(centroids);
  fit.inertia_history.push_back(assign_all(x, fit.model.centroids, ids, dist));
  fit.assignment = std::move(ids);
  return fit;
}

}  // namespace detail

// Lloyd's algorithm: assign to the nearest centroid, move centroids to cluster
// means, repeat until the centroids stop moving or max_iter is reached.
inline ClusterFit kmeans_fit(const Matrix& x, const KMeansParams& p) {
  p.validate();
  if (x.rows() == 0) throw Error("kmeans: empty input");
  if (!x.allFinite()) throw Error("kmeans: input contains non-finite values");
  if (static_cast<std::size_t>(x.rows()) < p.k) throw Error("kmeans: fewer rows than k");
  Rng rng(p.seed);
  ClusterFit best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t run = 0; run < p.n_init; ++run) {
    Matrix init = p.init == KMeansInit::PlusPlus ? detail::init_plus_plus(x, p.k, rng) : detail::init_random(x, p.k, rng);
    auto fit = detail::lloyd(x, std::move(init), p);
    if (fit.inertia_history.back() < best_inertia) {
      best_inertia = fit.inertia_history.back();
      best = std::move(fit);
    }
  }
  best.model.params = {{"k", p.k},
                       {"seed", p.seed},
                       {"max_iter", p.max_iter},
                       {"tolerance", p.tolerance},
                       {"init", p.init == KMeansInit::PlusPlus ? "k-means++" : "random"},
                       {"n_init", p.n_init}};
  return best;
}

inline ClusterFit kmeans_fit(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter = 300) {
  KMeansParams p;
  p.k = k;
  p.seed = seed;
  p.max_iter = max_iter;
  return kmeans_fit(x, p);
}

}  // namespace clustids
