#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "clustids/cf.hpp"
#include "clustids/dataset.hpp"
#include "clustids/mlp.hpp"
#include "clustids/rng.hpp"

// Independent reference computations shared by the unit tests and the
// acceptance run.
namespace testutil {

using namespace clustids;

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

inline Eigen::MatrixXd random_targets(Rng& rng, Eigen::Index batch, Eigen::Index classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(batch, classes);
  for (Eigen::Index i = 0; i < batch; ++i) t(i, static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(classes)))) = 1.0;
  return t;
}

// Perturbs gamma/beta away from their (1, 0) defaults so their gradients are exercised.
inline void jitter_norms(MlpModel& m, Rng& rng) {
  for (auto& bn : m.norms) {
    for (Eigen::Index i = 0; i < bn.gamma.size(); ++i) {
      bn.gamma(i) = rng.uniform(0.5, 1.5);
      bn.beta(i) = rng.uniform(-0.5, 0.5);
    }
  }
  for (auto& d : m.hidden) {
    for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias(i) = rng.uniform(-0.2, 0.2);
  }
  for (Eigen::Index i = 0; i < m.output.bias.size(); ++i) m.output.bias(i) = rng.uniform(-0.2, 0.2);
}

inline double batch_loss(MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t) {
  return loss(forward(m, x, Mode::Train).probabilities, t, m.config.loss);
}

// Largest norm-wise relative error between analytic and central-difference
// gradients over all parameter tensors.
inline double gradient_check(MlpModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t, double h = 1e-5) {
  auto fwd = forward(m, x, Mode::Train);
  const auto grads = backward(m, fwd.cache, t);
  const auto analytic = grads.views();
  auto params = m.parameters();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    double diff = 0.0;
    double na = 0.0;
    double nn = 0.0;
    for (std::size_t j = 0; j < params[p].size(); ++j) {
      const double saved = params[p][j];
      params[p][j] = saved + h;
      const double up = batch_loss(m, x, t);
      params[p][j] = saved - h;
      const double down = batch_loss(m, x, t);
      params[p][j] = saved;
      const double numeric = (up - down) / (2 * h);
      diff += std::pow(numeric - analytic[p][j], 2);
      na += std::pow(analytic[p][j], 2);
      nn += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(na) + std::sqrt(nn), 1e-6);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

inline ClusteringFeature random_cf(Rng& rng, std::size_t dim) {
  ClusteringFeature cf = ClusteringFeature::zero(dim);
  const std::size_t n = 1 + rng.uniform_index(20);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p(dim);
    for (auto& v : p) v = rng.normal(0.0, 3.0);
    cf += ClusteringFeature::of_point(p);
  }
  return cf;
}

inline double sse(const Matrix& x, const std::vector<int>& ids, const Matrix& c) {
  double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += (x.row(i) - c.row(ids[static_cast<std::size_t>(i)])).squaredNorm();
  return s;
}

// Mutual information from the joint contingency table: H(X) + H(Y) - H(X,Y).
template <typename A, typename B>
inline double contingency_ig(const std::vector<A>& y, const std::vector<B>& x) {
  std::map<A, double> py;
  std::map<B, double> px;
  std::map<std::pair<A, B>, double> pxy;
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    py[y[i]] += 1 / n;
    px[x[i]] += 1 / n;
    pxy[{y[i], x[i]}] += 1 / n;
  }
  auto h = [](const auto& m) {
    double s = 0;
    for (const auto& [k, p] : m) s -= p * std::log2(p);
    return s;
  };
  return h(py) + h(px) - h(pxy);
}

// Fraction of (positive, negative) pairs ranked correctly, ties counting one half.
inline double concordant_auc(const std::vector<int>& truth, const Eigen::MatrixXd& probs, int c) {
  double good = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != c) continue;
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (truth[j] == c) continue;
      const double a = probs(static_cast<Eigen::Index>(i), c);
      const double b = probs(static_cast<Eigen::Index>(j), c);
      good += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
      pairs += 1;
    }
  }
  return good / pairs;
}

inline Eigen::MatrixXd two_column(const std::vector<double>& positive_scores) {
  Eigen::MatrixXd p(static_cast<Eigen::Index>(positive_scores.size()), 2);
  for (std::size_t i = 0; i < positive_scores.size(); ++i) {
    p(static_cast<Eigen::Index>(i), 1) = positive_scores[i];
    p(static_cast<Eigen::Index>(i), 0) = 1 - positive_scores[i];
  }
  return p;
}

}  // namespace testutil
