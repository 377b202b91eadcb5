#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clustids/dataset.hpp"
#include "clustids/error.hpp"
#include "clustids/mlp.hpp"
#include "clustids/rng.hpp"

namespace clustids {

// Tracks validation loss; asks to stop after `patience` epochs without an
// improvement larger than `min_delta`.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience, double min_delta = 1e-6) : patience_(patience), min_delta_(min_delta) {}

  // Returns true when `loss` is a new best.
  bool observe(double loss) {
    ++epoch_;
    if (std::isfinite(loss) && loss < best_ - min_delta_) {
      best_ = loss;
      best_epoch_ = epoch_;
      wait_ = 0;
      return true;
    }
    ++wait_;
    return false;
  }

  bool should_stop() const noexcept { return wait_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_; }

 private:
  std::size_t patience_;
  double min_delta_;
  std::size_t epoch_ = 0;
  std::size_t wait_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Eigen::MatrixXd gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline Eigen::MatrixXd one_hot(std::span<const int> y, std::span<const std::size_t> idx, std::size_t classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < idx.size(); ++i) t(static_cast<Eigen::Index>(i), y[idx[i]]) = 1.0;
  return t;
}

inline Eigen::Index argmax_row(const Eigen::MatrixXd& p, Eigen::Index r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < p.cols(); ++c) {
    if (p(r, c) > p(r, best)) best = c;
  }
  return best;
}

struct SavedParams {
  std::vector<DenseLayer> hidden;
  std::vector<BatchNormLayer> norms;
  DenseLayer output;
};

}  // namespace detail

struct Prediction {
  std::vector<int> class_ids;
  Eigen::MatrixXd probabilities;  // rows x classes
};

// Argmax of inference-mode probabilities; ties go to the lowest class index.
inline Prediction predict(const MlpModel& m, const Matrix& x, std::size_t chunk = 8192) {
  if (static_cast<std::size_t>(x.cols()) != m.input_width) {
    throw Error("predict: input has " + std::to_string(x.cols()) + " columns, model expects " +
                std::to_string(m.input_width));
  }
  Prediction out;
  out.probabilities.resize(x.rows(), static_cast<Eigen::Index>(m.class_count()));
  for (Eigen::Index start = 0; start < x.rows(); start += static_cast<Eigen::Index>(chunk)) {
    const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), x.rows() - start);
    const Eigen::MatrixXd block = x.middleRows(start, len);
    out.probabilities.middleRows(start, len) = infer(m, block);
  }
  out.class_ids.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.class_ids[static_cast<std::size_t>(r)] = static_cast<int>(detail::argmax_row(out.probabilities, r));
  }
  return out;
}

// Mean loss and accuracy of inference-mode predictions.
inline std::pair<double, double> evaluate_loss(const MlpModel& m, const Matrix& x, std::span<const int> y) {
  const auto pred = predict(m, x);
  std::vector<std::size_t> all(y.size());
  std::iota(all.begin(), all.end(), 0);
  const auto targets = detail::one_hot(y, all, m.class_count());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += pred.class_ids[i] == y[i];
  return {loss(pred.probabilities, targets, m.config.loss), static_cast<double>(correct) / static_cast<double>(y.size())};
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam training with per-epoch shuffling and early stopping on the
// validation loss. The returned model carries the best-validation parameters.
// Labels are indices into `classes`.
inline MlpModel train(const Matrix& x_train, std::span<const int> y_train, const Matrix& x_val, std::span<const int> y_val,
                      std::vector<std::string> classes, const MlpConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x_train.rows());
  if (n < 2) throw Error("train: need at least 2 training rows");
  if (y_train.size() != n) throw Error("train: training rows and labels differ in length");
  if (x_val.rows() == 0) throw Error("train: empty validation set");
  if (static_cast<std::size_t>(x_val.rows()) != y_val.size()) throw Error("train: validation rows and labels differ");
  if (x_val.cols() != x_train.cols()) throw Error("train: training and validation widths differ");
  for (int y : y_train) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes.size()) throw Error("train: label index out of range");
  }
  for (int y : y_val) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes.size()) throw Error("train: label index out of range");
  }

  MlpModel model = MlpModel::create(static_cast<std::size_t>(x_train.cols()), std::move(classes), cfg);
  const std::size_t k = model.class_count();
  Rng shuffler(derive_seed(cfg.seed, "mlp-shuffle"));
  AdamState adam;
  EarlyStopping stopper(cfg.early_stop_patience);
  detail::SavedParams best{model.hidden, model.norms, model.output};

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Batch boundaries; a trailing batch of one row is folded into the previous one.
  std::vector<std::size_t> bounds;
  for (std::size_t s = 0; s < n; s += cfg.batch_size) bounds.push_back(s);
  if (n - bounds.back() == 1) bounds.pop_back();
  bounds.push_back(n);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffler.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
      const std::span<const std::size_t> idx(order.data() + bounds[b], bounds[b + 1] - bounds[b]);
      const auto xb = detail::gather_rows(x_train, idx);
      const auto tb = detail::one_hot(y_train, idx, k);
      auto fwd = forward(model, xb, Mode::Train);
      loss_sum += loss(fwd.probabilities, tb, cfg.loss) * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        correct += detail::argmax_row(fwd.probabilities, static_cast<Eigen::Index>(i)) == y_train[idx[i]];
      }
      const auto grads = backward(model, fwd.cache, tb);
      const auto params = model.parameters();
      const auto views = grads.views();
      adam_step(params, views, adam, cfg.learning_rate);
      ++model.generation;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    std::tie(rec.val_loss, rec.val_accuracy) = evaluate_loss(model, x_val, y_val);
    model.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (stopper.observe(rec.val_loss)) best = {model.hidden, model.norms, model.output};
    if (stopper.should_stop()) {
      model.history.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  if (stopper.best_epoch() > 0) {
    model.hidden = std::move(best.hidden);
    model.norms = std::move(best.norms);
    model.output = std::move(best.output);
    ++model.generation;
  }
  model.history.best_epoch = stopper.best_epoch();
  return model;
}

// Dataset-level entry point. The class list is the sorted union of training
// and validation labels; classes seen only in validation produce a warning.
inline MlpModel train(const FlowDataset& train_set, const FlowDataset& validation_set, const MlpConfig& cfg,
                      const EpochCallback& on_epoch = {}) {
  if (train_set.empty() || validation_set.empty()) throw Error("train: empty training or validation set");
  if (train_set.schema.feature_names != validation_set.schema.feature_names) {
    throw Error("train: training and validation schemas differ");
  }
  std::set<std::string> train_classes(train_set.labels.begin(), train_set.labels.end());
  std::set<std::string> all = train_classes;
  all.insert(validation_set.labels.begin(), validation_set.labels.end());
  std::vector<std::string> warnings;
  for (const auto& c : all) {
    if (!train_classes.contains(c)) warnings.push_back("class '" + c + "' appears in validation but not in training");
  }
  std::vector<std::string> classes(all.begin(), all.end());
  const auto ytr = encode_labels(std::span<const std::string>(train_set.labels), classes);
  const auto yva = encode_labels(std::span<const std::string>(validation_set.labels), classes);
  auto model = train(train_set.rows, ytr.codes, validation_set.rows, yva.codes, classes, cfg, on_epoch);
  model.history.warnings = std::move(warnings);
  return model;
}

// Checkpoint: 8-byte magic, u64 metadata length, JSON metadata, then every
// parameter and running statistic as raw little-endian doubles.
namespace checkpoint {

inline constexpr char kMagic[8] = {'C', 'I', 'D', 'S', 'M', 'L', 'P', '1'};

namespace detail {

template <typename Model, typename F>
void for_each_buffer(Model& m, F&& f) {
  for (std::size_t l = 0; l < m.hidden.size(); ++l) {
    f(m.hidden[l].weights.data(), m.hidden[l].weights.size());
    f(m.hidden[l].bias.data(), m.hidden[l].bias.size());
    f(m.norms[l].gamma.data(), m.norms[l].gamma.size());
    f(m.norms[l].beta.data(), m.norms[l].beta.size());
    f(m.norms[l].running_mean.data(), m.norms[l].running_mean.size());
    f(m.norms[l].running_var.data(), m.norms[l].running_var.size());
  }
  f(m.output.weights.data(), m.output.weights.size());
  f(m.output.bias.data(), m.output.bias.size());
}

}  // namespace detail

inline void save(const MlpModel& model, const std::filesystem::path& path) {
  nlohmann::json meta = {{"format", "clustids.mlp/1"},
                         {"config", model.config.to_json()},
                         {"classes", model.classes},
                         {"input_width", model.input_width},
                         {"history", model.history.to_json()}};
  const std::string text = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::for_each_buffer(model, [&out](const double* p, Eigen::Index count) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * static_cast<Eigen::Index>(sizeof(double))));
  });
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline MlpModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error(path.string() + ": not a model checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (std::uint64_t{1} << 26)) throw Error(path.string() + ": corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto meta = nlohmann::json::parse(text);
  auto model = MlpModel::create(meta.at("input_width").get<std::size_t>(),
                                meta.at("classes").get<std::vector<std::string>>(),
                                MlpConfig::from_json(meta.at("config")));
  model.history = TrainingHistory::from_json(meta.at("history"));
  detail::for_each_buffer(model, [&in](double* p, Eigen::Index count) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(count * static_cast<Eigen::Index>(sizeof(double))));
  });
  if (!in) throw Error(path.string() + ": truncated checkpoint");
  if (in.peek() != std::char_traits<char>::eof()) throw Error(path.string() + ": trailing bytes after parameters");
  return model;
}

}  // namespace checkpoint

}  // namespace clustids
