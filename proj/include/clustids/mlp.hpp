#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clustids/error.hpp"
#include "clustids/rng.hpp"

namespace clustids {

enum class LossKind { CrossEntropy, MeanSquaredError };

inline std::string to_string(LossKind k) { return k == LossKind::CrossEntropy ? "cross-entropy" : "mean-squared-error"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "cross-entropy" || s == "ce") return LossKind::CrossEntropy;
  if (s == "mean-squared-error" || s == "mse") return LossKind::MeanSquaredError;
  throw Error("unknown loss '" + s + "'");
}

struct MlpConfig {
  std::vector<std::size_t> hidden_sizes{256, 256};
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 200;
  std::size_t early_stop_patience = 20;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::CrossEntropy;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  void validate() const {
    if (hidden_sizes.empty()) throw Error("mlp: at least one hidden layer is required");
    for (auto h : hidden_sizes) {
      if (h == 0) throw Error("mlp: hidden sizes must be positive");
    }
    if (!(learning_rate > 0.0)) throw Error("mlp: learning_rate must be positive");
    if (batch_size < 2) throw Error("mlp: batch_size must be >= 2");
    if (max_epochs == 0) throw Error("mlp: max_epochs must be positive");
    if (early_stop_patience == 0 || early_stop_patience > max_epochs) {
      throw Error("mlp: early_stop_patience must be in [1, max_epochs]");
    }
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw Error("mlp: bn_momentum must be in (0, 1)");
    if (!(bn_epsilon > 0.0)) throw Error("mlp: bn_epsilon must be positive");
  }

  nlohmann::json to_json() const {
    return {{"hidden_sizes", hidden_sizes},   {"learning_rate", learning_rate},
            {"batch_size", batch_size},       {"max_epochs", max_epochs},
            {"early_stop_patience", early_stop_patience}, {"seed", seed},
            {"loss", to_string(loss)},        {"bn_momentum", bn_momentum},
            {"bn_epsilon", bn_epsilon}};
  }

  static MlpConfig from_json(const nlohmann::json& j) {
    MlpConfig c;
    c.hidden_sizes = j.value("hidden_sizes", c.hidden_sizes);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.seed = j.value("seed", c.seed);
    c.loss = parse_loss(j.value("loss", to_string(c.loss)));
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
    c.validate();
    return c;
  }
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

struct BatchNormLayer {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::vector<std::string> warnings;

  bool empty() const noexcept { return epochs.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) {
      rows.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
    }
    return {{"epochs", rows}, {"best_epoch", best_epoch}, {"stopped_early", stopped_early}, {"warnings", warnings}};
  }

  static TrainingHistory from_json(const nlohmann::json& j) {
    TrainingHistory h;
    for (const auto& r : j.at("epochs")) {
      h.epochs.push_back({r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                          r.at("train_accuracy").get<double>(), r.at("val_loss").get<double>(),
                          r.at("val_accuracy").get<double>()});
    }
    h.best_epoch = j.value("best_epoch", std::size_t{0});
    h.stopped_early = j.value("stopped_early", false);
    h.warnings = j.value("warnings", std::vector<std::string>{});
    return h;
  }
};

// Dense+BatchNorm+ReLU hidden blocks followed by a dense softmax head.
struct MlpModel {
  MlpConfig config;
  std::vector<std::string> classes;
  std::size_t input_width = 0;
  std::vector<DenseLayer> hidden;
  std::vector<BatchNormLayer> norms;
  DenseLayer output;
  TrainingHistory history;
  // Bumped on every parameter update; lets backward() reject stale caches.
  std::uint64_t generation = 0;

  std::size_t class_count() const noexcept { return classes.size(); }

  // He-uniform weights on ReLU layers, Glorot-uniform on the softmax head,
  // zero biases, gamma = 1, beta = 0, running statistics (0, 1).
  static MlpModel create(std::size_t input_width, std::vector<std::string> classes, const MlpConfig& cfg) {
    cfg.validate();
    if (input_width == 0) throw Error("mlp: input width must be positive");
    if (classes.size() < 2) throw Error("mlp: at least two classes are required");
    MlpModel m;
    m.config = cfg;
    m.classes = std::move(classes);
    m.input_width = input_width;
    Rng rng(derive_seed(cfg.seed, "mlp-init"));
    auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, double limit) {
      Eigen::MatrixXd w(rows, cols);
      for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) w(r, c) = rng.uniform(-limit, limit);
      }
      return w;
    };
    std::size_t fan_in = input_width;
    for (std::size_t h : cfg.hidden_sizes) {
      const auto out = static_cast<Eigen::Index>(h);
      m.hidden.push_back({uniform(out, static_cast<Eigen::Index>(fan_in), std::sqrt(6.0 / static_cast<double>(fan_in))),
                          Eigen::VectorXd::Zero(out)});
      m.norms.push_back({Eigen::VectorXd::Ones(out), Eigen::VectorXd::Zero(out), Eigen::VectorXd::Zero(out),
                         Eigen::VectorXd::Ones(out), cfg.bn_momentum, cfg.bn_epsilon});
      fan_in = h;
    }
    const auto k = static_cast<Eigen::Index>(m.classes.size());
    m.output = {uniform(k, static_cast<Eigen::Index>(fan_in),
                        std::sqrt(6.0 / static_cast<double>(fan_in + m.classes.size()))),
                Eigen::VectorXd::Zero(k)};
    return m;
  }

  // Trainable parameters in a fixed order: per hidden block W, b, gamma, beta;
  // then the head's W, b.
  std::vector<std::span<double>> parameters() {
    std::vector<std::span<double>> p;
    auto add = [&p](auto& a) { p.emplace_back(a.data(), static_cast<std::size_t>(a.size())); };
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      add(hidden[l].weights);
      add(hidden[l].bias);
      add(norms[l].gamma);
      add(norms[l].beta);
    }
    add(output.weights);
    add(output.bias);
    return p;
  }
};

enum class Mode { Train, Infer };

// Activations kept by a train-mode forward pass for backward().
struct ForwardCache {
  struct Block {
    Eigen::MatrixXd input;     // activation entering the dense layer
    Eigen::MatrixXd xhat;      // normalized pre-activation
    Eigen::VectorXd inv_std;   // 1 / sqrt(var + eps)
    Eigen::MatrixXd bn_out;    // gamma * xhat + beta (before ReLU)
  };
  std::vector<Block> blocks;
  Eigen::MatrixXd head_input;
  Eigen::MatrixXd probabilities;
  const MlpModel* model = nullptr;
  std::uint64_t generation = 0;
};

struct ForwardResult {
  Eigen::MatrixXd probabilities;  // batch x classes
  ForwardCache cache;             // populated in train mode only
};

// Row-wise softmax with the row maximum subtracted first.
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p = z.colwise() - z.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

namespace detail {

inline Eigen::MatrixXd affine(const Eigen::MatrixXd& a, const DenseLayer& layer) {
  Eigen::MatrixXd z = a * layer.weights.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

}  // namespace detail

// Inference pass using running batch-norm statistics. Mutates nothing.
inline Eigen::MatrixXd infer(const MlpModel& m, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != m.input_width) {
    throw Error("mlp: input has " + std::to_string(x.cols()) + " columns, model expects " +
                std::to_string(m.input_width));
  }
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < m.hidden.size(); ++l) {
    const auto& bn = m.norms[l];
    Eigen::MatrixXd z = detail::affine(a, m.hidden[l]);
    const Eigen::ArrayXd scale = bn.gamma.array() / (bn.running_var.array() + bn.epsilon).sqrt();
    const Eigen::ArrayXd shift = bn.beta.array() - bn.running_mean.array() * scale;
    z.array().rowwise() *= scale.transpose();
    z.array().rowwise() += shift.transpose();
    a = z.cwiseMax(0.0);
  }
  return softmax_rows(detail::affine(a, m.output));
}

// Train mode normalizes with batch statistics and folds them into the running
// statistics; infer mode defers to infer().
inline ForwardResult forward(MlpModel& m, const Eigen::MatrixXd& x, Mode mode) {
  if (mode == Mode::Infer) return {infer(m, x), {}};
  if (static_cast<std::size_t>(x.cols()) != m.input_width) {
    throw Error("mlp: input has " + std::to_string(x.cols()) + " columns, model expects " +
                std::to_string(m.input_width));
  }
  const Eigen::Index batch = x.rows();
  if (batch < 2) throw Error("mlp: train-mode forward needs a batch of at least 2 rows");
  ForwardResult r;
  r.cache.model = &m;
  r.cache.generation = m.generation;
  Eigen::MatrixXd a = x;
  for (std::size_t l = 0; l < m.hidden.size(); ++l) {
    auto& bn = m.norms[l];
    ForwardCache::Block block;
    block.input = std::move(a);
    Eigen::MatrixXd z = detail::affine(block.input, m.hidden[l]);
    const Eigen::RowVectorXd mean = z.colwise().mean();
    z.rowwise() -= mean;
    const Eigen::RowVectorXd var = z.array().square().colwise().mean();
    block.inv_std = (var.array() + bn.epsilon).rsqrt().transpose();
    block.xhat = z.array().rowwise() * block.inv_std.transpose().array();
    block.bn_out = block.xhat.array().rowwise() * bn.gamma.transpose().array();
    block.bn_out.rowwise() += bn.beta.transpose();
    a = block.bn_out.cwiseMax(0.0);

    const double unbiased = static_cast<double>(batch) / static_cast<double>(batch - 1);
    bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * mean.transpose();
    bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * unbiased * var.transpose();
    r.cache.blocks.push_back(std::move(block));
  }
  r.cache.head_input = std::move(a);
  r.probabilities = softmax_rows(detail::affine(r.cache.head_input, m.output));
  r.cache.probabilities = r.probabilities;
  return r;
}

inline constexpr double kLogFloor = 1e-12;

// Mean over samples of -sum y log(p + 1e-12), or of ||y - p||^2.
inline double loss(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets, LossKind kind) {
  if (probabilities.rows() != targets.rows() || probabilities.cols() != targets.cols()) {
    throw Error("loss: shape mismatch");
  }
  if (probabilities.rows() == 0) throw Error("loss: empty batch");
  const double m = static_cast<double>(probabilities.rows());
  if (kind == LossKind::CrossEntropy) {
    return -(targets.array() * (probabilities.array() + kLogFloor).log()).sum() / m;
  }
  return (targets - probabilities).squaredNorm() / m;
}

// Gradients laid out like MlpModel::parameters().
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
  std::vector<Eigen::VectorXd> gamma;
  std::vector<Eigen::VectorXd> beta;
  Eigen::MatrixXd head_weights;
  Eigen::VectorXd head_bias;

  std::vector<std::span<const double>> views() const {
    std::vector<std::span<const double>> v;
    auto add = [&v](const auto& a) { v.emplace_back(a.data(), static_cast<std::size_t>(a.size())); };
    for (std::size_t l = 0; l < weights.size(); ++l) {
      add(weights[l]);
      add(bias[l]);
      add(gamma[l]);
      add(beta[l]);
    }
    add(head_weights);
    add(head_bias);
    return v;
  }
};

// Exact gradients of the configured loss for the batch behind `cache`.
inline Gradients backward(const MlpModel& m, const ForwardCache& cache, const Eigen::MatrixXd& targets) {
  if (cache.model != &m || cache.generation != m.generation) {
    throw Error("mlp: stale forward cache (model changed since the forward pass)");
  }
  const auto& p = cache.probabilities;
  if (targets.rows() != p.rows() || targets.cols() != p.cols()) throw Error("mlp: target shape mismatch");
  const double batch = static_cast<double>(p.rows());

  // dL/dp, then through the softmax Jacobian: dz = p * (g - <g, p>).
  Eigen::MatrixXd g;
  if (m.config.loss == LossKind::CrossEntropy) {
    g = -(targets.array() / (p.array() + kLogFloor)) / batch;
  } else {
    g = 2.0 * (p - targets) / batch;
  }
  const Eigen::VectorXd dot = (g.array() * p.array()).rowwise().sum();
  Eigen::MatrixXd dz = p.array() * (g.colwise() - dot).array();

  Gradients grads;
  const std::size_t depth = m.hidden.size();
  grads.weights.resize(depth);
  grads.bias.resize(depth);
  grads.gamma.resize(depth);
  grads.beta.resize(depth);
  grads.head_weights = dz.transpose() * cache.head_input;
  grads.head_bias = dz.colwise().sum().transpose();
  Eigen::MatrixXd da = dz * m.output.weights;

  for (std::size_t l = depth; l-- > 0;) {
    const auto& block = cache.blocks[l];
    const auto& bn = m.norms[l];
    Eigen::MatrixXd dy = (block.bn_out.array() > 0.0).select(da, 0.0);
    grads.gamma[l] = (dy.array() * block.xhat.array()).colwise().sum().transpose();
    grads.beta[l] = dy.colwise().sum().transpose();
    const Eigen::MatrixXd dxhat = dy.array().rowwise() * bn.gamma.transpose().array();
    const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
    const Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * block.xhat.array()).colwise().sum();
    Eigen::MatrixXd dpre = batch * dxhat;
    dpre.rowwise() -= sum_dxhat;
    dpre -= (block.xhat.array().rowwise() * sum_dxhat_xhat.array()).matrix();
    dpre = (dpre.array().rowwise() * (block.inv_std.transpose().array() / batch)).matrix();

    grads.weights[l] = dpre.transpose() * block.input;
    grads.bias[l] = dpre.colwise().sum().transpose();
    if (l > 0) da = dpre * m.hidden[l].weights;
  }
  return grads;
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// Adam with bias correction. Moment buffers are sized on the first call.
inline void adam_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                      AdamState& state, double learning_rate) {
  if (params.size() != grads.size()) throw Error("adam: parameter and gradient counts differ");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw Error("adam: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != state.first_moment[i].size()) {
      throw Error("adam: shape mismatch in parameter " + std::to_string(i));
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m1 = state.first_moment[i];
    auto& m2 = state.second_moment[i];
    const auto& g = grads[i];
    auto& p = params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m1[j] = state.beta1 * m1[j] + (1.0 - state.beta1) * g[j];
      m2[j] = state.beta2 * m2[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= learning_rate * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + state.epsilon);
    }
  }
}

}  // namespace clustids
