#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "clustids/dataset.hpp"
#include "clustids/error.hpp"

namespace clustids {

enum class ClusterAlgorithm { Birch, KMeans };

inline std::string to_string(ClusterAlgorithm a) { return a == ClusterAlgorithm::Birch ? "birch" : "kmeans"; }

inline ClusterAlgorithm parse_cluster_algorithm(const std::string& s) {
  if (s == "birch") return ClusterAlgorithm::Birch;
  if (s == "kmeans" || s == "k-means") return ClusterAlgorithm::KMeans;
  throw Error("unknown clustering algorithm '" + s + "'");
}

// A fitted clustering: k centroids and the parameters that produced them.
struct ClusterModel {
  ClusterAlgorithm algorithm = ClusterAlgorithm::KMeans;
  Matrix centroids;  // k x dim
  nlohmann::json params = nlohmann::json::object();

  std::size_t k() const noexcept { return static_cast<std::size_t>(centroids.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(centroids.cols()); }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < centroids.rows(); ++i) {
      rows.push_back(std::vector<double>(centroids.row(i).data(), centroids.row(i).data() + centroids.cols()));
    }
    return {{"algorithm", to_string(algorithm)}, {"k", k()}, {"dim", dim()}, {"params", params}, {"centroids", rows}};
  }

  static ClusterModel from_json(const nlohmann::json& j) {
    ClusterModel m;
    m.algorithm = parse_cluster_algorithm(j.at("algorithm").get<std::string>());
    m.params = j.value("params", nlohmann::json::object());
    const auto k = j.at("k").get<std::size_t>();
    const auto dim = j.at("dim").get<std::size_t>();
    const auto& rows = j.at("centroids");
    if (rows.size() != k || k == 0) throw Error("cluster model: centroid count does not match k");
    m.centroids.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < k; ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (row.size() != dim) throw Error("cluster model: centroid width does not match dim");
      for (std::size_t c = 0; c < dim; ++c) {
        m.centroids(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
      }
    }
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << to_json().dump(2) << '\n';
  }

  static ClusterModel load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return from_json(nlohmann::json::parse(in));
  }
};

// Nearest centroid for one point; ties go to the lowest id.
inline int nearest_centroid(const Matrix& centroids, const double* x, double* best_sq = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  const Eigen::Index dim = centroids.cols();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double* cr = centroids.row(c).data();
    double d = 0.0;
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double diff = x[j] - cr[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (best_sq) *best_sq = best_d;
  return best;
}

inline std::vector<int> assign(const ClusterModel& m, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != m.dim()) {
    throw Error("assign: data has " + std::to_string(x.cols()) + " columns, model expects " +
                std::to_string(m.dim()));
  }
  std::vector<int> ids(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    ids[static_cast<std::size_t>(i)] = nearest_centroid(m.centroids, x.row(i).data());
  }
  return ids;
}

// Result of a fit: the model plus diagnostics about the run.
struct ClusterFit {
  ClusterModel model;
  std::vector<int> assignment;          // training rows
  std::vector<double> inertia_history;  // k-means: inertia after each assignment step
  std::size_t iterations = 0;
  bool converged = true;
  std::size_t subclusters = 0;  // birch: leaf subclusters before the global phase
  bool reduced_k = false;       // birch: fewer subclusters than requested clusters
};

}  // namespace clustids
