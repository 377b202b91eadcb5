#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "clustids/dataset.hpp"
#include "clustids/rng.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("clustids-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  return path;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline clustids::FlowDataset make_dataset(std::vector<std::string> features, std::vector<std::vector<double>> rows,
                                          std::vector<std::string> labels) {
  clustids::FlowDataset d;
  d.schema.feature_names = std::move(features);
  d.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d.schema.width()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      d.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  d.labels = std::move(labels);
  d.validate();
  return d;
}

struct Blobs {
  clustids::Matrix x;
  std::vector<int> truth;
  clustids::Matrix centers;
};

// k isotropic Gaussian blobs with centers drawn in [0, box]^dim at pairwise
// distance >= min_separation; rows are shuffled.
inline Blobs make_blobs(std::uint64_t seed, std::size_t n = 300, std::size_t k = 3, double sigma = 0.05,
                        double min_separation = 1.0, double box = 3.0, std::size_t dim = 2) {
  clustids::Rng rng(seed);
  Blobs b;
  b.centers.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < k;) {
    for (std::size_t j = 0; j < dim; ++j) b.centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = rng.uniform(0.0, box);
    bool ok = true;
    for (std::size_t o = 0; o < c; ++o) {
      if ((b.centers.row(static_cast<Eigen::Index>(o)) - b.centers.row(static_cast<Eigen::Index>(c))).norm() < min_separation) ok = false;
    }
    if (ok) ++c;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  b.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  b.truth.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = order[i] % k;
    b.truth[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) {
      b.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rng.normal(b.centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)), sigma);
    }
  }
  return b;
}

// Seven classes in `dim` features. Three classes are single isolated blobs. The
// other four form two confusable pairs: each pair fills the corners of a unit
// square in the first two features with the classes on opposite corners, so
// both classes of a pair have the same per-feature distribution while every
// blob stays pure.
inline clustids::FlowDataset make_latent_pairs(std::uint64_t seed, std::size_t n = 7000, std::size_t dim = 4,
                                               double sigma = 0.12) {
  clustids::Rng rng(seed);
  struct Blob {
    Eigen::VectorXd center;
    int label;
  };
  // Five well separated anchors: three single blobs, then the two squares.
  std::vector<Eigen::VectorXd> anchors;
  while (anchors.size() < 5) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(dim));
    for (auto& v : c) v = rng.uniform(0.0, 10.0);
    bool ok = true;
    for (const auto& o : anchors) ok = ok && (o - c).norm() >= 5.0;
    if (ok) anchors.push_back(c);
  }
  std::vector<Blob> blobs;
  for (int label = 0; label < 3; ++label) blobs.push_back({anchors[static_cast<std::size_t>(label)], label});
  for (int pair = 0; pair < 2; ++pair) {
    for (int corner = 0; corner < 4; ++corner) {
      Eigen::VectorXd c = anchors[3 + static_cast<std::size_t>(pair)];
      const int a = corner & 1;
      const int b = corner >> 1;
      c(0) += a;
      c(1) += b;
      blobs.push_back({c, 3 + 2 * pair + (a ^ b)});
    }
  }
  clustids::FlowDataset d;
  for (std::size_t j = 0; j < dim; ++j) d.schema.feature_names.push_back("f" + std::to_string(j));
  d.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t i = 0; i < n; ++i) {
    // Equal class sizes: each single blob gets 1/7 of the rows, each pair blob 1/14.
    const std::size_t slot = order[i] % 14;
    const Blob& b = slot < 6 ? blobs[slot / 2] : blobs[3 + (slot - 6)];
    for (std::size_t j = 0; j < dim; ++j) {
      d.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal(b.center(static_cast<Eigen::Index>(j)), sigma);
    }
    d.labels.push_back("class" + std::to_string(b.label));
  }
  return d;
}

// True when the two labelings induce the same partition (ids may be permuted).
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab;
  std::map<int, int> ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [i1, n1] = ab.emplace(a[i], b[i]);
    auto [i2, n2] = ba.emplace(b[i], a[i]);
    if (i1->second != b[i] || i2->second != a[i]) return false;
  }
  return true;
}

}  // namespace testutil
