#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "clustids/mlp.hpp"
#include "clustids/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace clustids;
using namespace testutil;

namespace {

MlpConfig small_config(std::vector<std::size_t> hidden, LossKind loss, std::uint64_t seed) {
  MlpConfig c;
  c.hidden_sizes = std::move(hidden);
  c.loss = loss;
  c.seed = seed;
  return c;
}

std::vector<double> flat_params(MlpModel& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.begin(), p.end());
  for (const auto& bn : m.norms) {
    out.insert(out.end(), bn.running_mean.data(), bn.running_mean.data() + bn.running_mean.size());
    out.insert(out.end(), bn.running_var.data(), bn.running_var.data() + bn.running_var.size());
  }
  return out;
}

// 100 points in 2-D split by the line x0 + x1 = 0 with margin 1.
void separable(std::uint64_t seed, Matrix& x, std::vector<int>& y) {
  Rng rng(seed);
  x.resize(100, 2);
  y.resize(100);
  for (Eigen::Index i = 0; i < 100; ++i) {
    const int c = static_cast<int>(i % 2);
    const double along = rng.uniform(-3, 3);
    const double across = (c ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
    x(i, 0) = (along + across) / std::sqrt(2.0);
    x(i, 1) = (-along + across) / std::sqrt(2.0);
    y[static_cast<std::size_t>(i)] = c;
  }
}

}  // namespace

TEST(MlpConfig, ValidationAndJson) {
  MlpConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.hidden_sizes, (std::vector<std::size_t>{256, 256}));
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.max_epochs, 200u);
  EXPECT_EQ(c.early_stop_patience, 20u);
  c.early_stop_patience = 300;
  EXPECT_THROW(c.validate(), Error);
  c = MlpConfig{};
  c.hidden_sizes = {4, 0};
  EXPECT_THROW(c.validate(), Error);
  c = MlpConfig{};
  c.loss = LossKind::MeanSquaredError;
  c.hidden_sizes = {7};
  const auto back = MlpConfig::from_json(c.to_json());
  EXPECT_EQ(back.hidden_sizes, c.hidden_sizes);
  EXPECT_EQ(back.loss, LossKind::MeanSquaredError);
}

TEST(Forward, RowsAreProbabilityVectors) {
  Rng rng(1);
  auto m = MlpModel::create(5, {"a", "b", "c", "d"}, small_config({16, 8}, LossKind::CrossEntropy, 3));
  const auto x = random_matrix(rng, 32, 5, 10.0);
  for (auto mode : {Mode::Train, Mode::Infer}) {
    const auto p = forward(m, x, mode).probabilities;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
      EXPECT_GT(p.row(i).minCoeff(), 0.0);
      EXPECT_LT(p.row(i).maxCoeff(), 1.0);
    }
  }
}

TEST(Forward, ZeroWeightsGiveUniformOutput) {
  auto m = MlpModel::create(3, {"1", "2", "3", "4", "5", "6", "7"}, small_config({8}, LossKind::CrossEntropy, 0));
  for (auto& d : m.hidden) d.weights.setZero();
  m.output.weights.setZero();
  Rng rng(2);
  const auto p = infer(m, random_matrix(rng, 4, 3));
  EXPECT_TRUE(p.isApproxToConstant(1.0 / 7.0, 1e-15));
}

TEST(Forward, InferenceIsPure) {
  Rng rng(3);
  auto m = MlpModel::create(4, {"a", "b", "c"}, small_config({8, 8}, LossKind::CrossEntropy, 1));
  forward(m, random_matrix(rng, 16, 4), Mode::Train);  // non-trivial running stats
  const auto before = flat_params(m);
  const auto x = random_matrix(rng, 10, 4);
  const auto a = forward(m, x, Mode::Infer).probabilities;
  const auto b = forward(m, x, Mode::Infer).probabilities;
  EXPECT_TRUE((a.array() == b.array()).all());
  EXPECT_EQ(flat_params(m), before);
}

TEST(Forward, RejectsBadShapes) {
  Rng rng(4);
  auto m = MlpModel::create(4, {"a", "b"}, small_config({8}, LossKind::CrossEntropy, 1));
  EXPECT_THROW(forward(m, random_matrix(rng, 5, 3), Mode::Infer), Error);
  EXPECT_THROW(forward(m, random_matrix(rng, 1, 4), Mode::Train), Error);
  EXPECT_THROW(MlpModel::create(4, {"only"}, MlpConfig{}), Error);
}

TEST(Forward, BatchNormNormalizesInTrainMode) {
  Rng rng(5);
  auto m = MlpModel::create(6, {"a", "b"}, small_config({12}, LossKind::CrossEntropy, 7));
  for (Eigen::Index i = 0; i < m.norms[0].gamma.size(); ++i) m.norms[0].gamma(i) = rng.uniform(0.5, 2.0);
  // Large-variance inputs so that epsilon is negligible next to the batch variance.
  const auto x = random_matrix(rng, 64, 6, 200.0);
  const auto fwd = forward(m, x, Mode::Train);
  const auto& out = fwd.cache.blocks[0].bn_out;
  const double gamma_norm = m.norms[0].gamma.norm();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double mean = out.col(j).mean();
    const double var = (out.col(j).array() - mean).square().mean();
    EXPECT_LT(std::abs(mean), 1e-6 * gamma_norm);
    EXPECT_NEAR(var, std::pow(m.norms[0].gamma(j), 2), 1e-4);
  }
  // Running statistics moved from (0, 1) and stay non-negative.
  EXPECT_GT(m.norms[0].running_mean.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GE(m.norms[0].running_var.minCoeff(), 0.0);
}

TEST(Loss, Examples) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 4);
  y(0, 1) = y(1, 0) = y(2, 3) = 1.0;
  EXPECT_LE(loss(y, y, LossKind::CrossEntropy), 1e-11);
  EXPECT_EQ(loss(y, y, LossKind::MeanSquaredError), 0.0);
  Eigen::MatrixXd t7 = Eigen::MatrixXd::Zero(2, 7);
  t7(0, 2) = t7(1, 6) = 1.0;
  const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(2, 7, 1.0 / 7.0);
  EXPECT_NEAR(loss(uniform, t7, LossKind::CrossEntropy), std::log(7.0), 1e-10);
  EXPECT_NEAR(std::log(7.0), 1.9459, 1e-4);
  // MSE: each row contributes (1 - 1/7)^2 + 6 (1/7)^2 = 6/7.
  EXPECT_NEAR(loss(uniform, t7, LossKind::MeanSquaredError), 6.0 / 7.0, 1e-12);
  EXPECT_THROW(loss(uniform, y, LossKind::CrossEntropy), Error);
}

TEST(Backward, MatchesFiniteDifferencesOnToyNet) {
  for (auto kind : {LossKind::CrossEntropy, LossKind::MeanSquaredError}) {
    Rng rng(6);
    auto m = MlpModel::create(4, {"a", "b", "c"}, small_config({5, 5}, kind, 2));
    jitter_norms(m, rng);
    const auto x = random_matrix(rng, 8, 4);
    const auto t = random_targets(rng, 8, 3);
    EXPECT_LT(gradient_check(m, x, t), 1e-4) << to_string(kind);
  }
}

TEST(Backward, MatchesFiniteDifferencesOnRandomArchitectures) {
  Rng rng(99);
  for (int draw = 0; draw < 20; ++draw) {
    const auto kind = draw % 2 ? LossKind::MeanSquaredError : LossKind::CrossEntropy;
    std::vector<std::size_t> hidden(1 + rng.uniform_index(3));
    for (auto& h : hidden) h = 2 + rng.uniform_index(6);
    const auto in = static_cast<Eigen::Index>(1 + rng.uniform_index(6));
    const auto k = 2 + rng.uniform_index(4);
    std::vector<std::string> classes;
    for (std::size_t c = 0; c < k; ++c) classes.push_back(std::to_string(c));
    auto m = MlpModel::create(static_cast<std::size_t>(in), classes, small_config(hidden, kind, rng.next_u64()));
    jitter_norms(m, rng);
    const auto batch = static_cast<Eigen::Index>(2 + rng.uniform_index(15));
    const auto x = random_matrix(rng, batch, in);
    const auto t = random_targets(rng, batch, static_cast<Eigen::Index>(k));
    EXPECT_LT(gradient_check(m, x, t), 1e-4) << "draw " << draw;
  }
}

TEST(Backward, StationaryPointHasZeroGradient) {
  Rng rng(7);
  auto m = MlpModel::create(3, {"a", "b", "c"}, small_config({6}, LossKind::MeanSquaredError, 4));
  const auto x = random_matrix(rng, 10, 3);
  auto fwd = forward(m, x, Mode::Train);
  // Targets equal to the prediction: the MSE loss is at its minimum of 0.
  const auto grads = backward(m, fwd.cache, fwd.probabilities);
  for (const auto& v : grads.views()) {
    double norm = 0;
    for (double g : v) norm += g * g;
    EXPECT_LT(std::sqrt(norm), 1e-8);
  }
}

TEST(Backward, DuplicatedBatchLeavesGradientsUnchanged) {
  for (auto kind : {LossKind::CrossEntropy, LossKind::MeanSquaredError}) {
    Rng rng(8);
    auto m = MlpModel::create(4, {"a", "b", "c"}, small_config({6, 5}, kind, 5));
    jitter_norms(m, rng);
    const auto x = random_matrix(rng, 6, 4);
    const auto t = random_targets(rng, 6, 3);
    Eigen::MatrixXd x2(12, 4);
    Eigen::MatrixXd t2(12, 3);
    x2 << x, x;
    t2 << t, t;
    auto f1 = forward(m, x, Mode::Train);
    const auto g1 = backward(m, f1.cache, t);
    auto f2 = forward(m, x2, Mode::Train);
    const auto g2 = backward(m, f2.cache, t2);
    const auto v1 = g1.views();
    const auto v2 = g2.views();
    for (std::size_t p = 0; p < v1.size(); ++p) {
      for (std::size_t j = 0; j < v1[p].size(); ++j) EXPECT_NEAR(v1[p][j], v2[p][j], 1e-9);
    }
  }
}

TEST(Backward, RejectsStaleCache) {
  Rng rng(9);
  auto m = MlpModel::create(2, {"a", "b"}, small_config({3}, LossKind::CrossEntropy, 1));
  const auto x = random_matrix(rng, 4, 2);
  const auto t = random_targets(rng, 4, 2);
  auto fwd = forward(m, x, Mode::Train);
  ++m.generation;
  EXPECT_THROW(backward(m, fwd.cache, t), Error);
  auto other = m;
  auto fwd2 = forward(m, x, Mode::Train);
  EXPECT_THROW(backward(other, fwd2.cache, t), Error);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p{1.0, -2.0, 3.5};
  const std::vector<double> g(3, 0.0);
  AdamState s;
  std::vector<std::span<double>> params{p};
  std::vector<std::span<const double>> grads{g};
  adam_step(params, grads, s, 0.1);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.5}));
  EXPECT_EQ(s.t, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.0, 0.0, 0.0, 0.0};
  const std::vector<double> g{0.3, -5.0, 1e-3, 0.0};
  AdamState s;
  std::vector<std::span<double>> params{p};
  std::vector<std::span<const double>> grads{g};
  const double lr = 0.01;
  adam_step(params, grads, s, lr);
  // m_hat = g and v_hat = g^2, so each step is lr * g / (|g| + eps).
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(p[i], -lr * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
    EXPECT_NEAR(std::abs(p[i]), lr, 1e-7);
  }
  EXPECT_EQ(p[3], 0.0);
}

TEST(Adam, DriftAfterGradientStopsDecays) {
  std::vector<double> p{0.0};
  AdamState s;
  std::vector<std::span<double>> params{p};
  const double lr = 1.0;
  const double g0 = 2.0;
  std::vector<double> steps;
  for (int t = 1; t <= 3; ++t) {
    const std::vector<double> g{t == 1 ? g0 : 0.0};
    std::vector<std::span<const double>> grads{g};
    const double before = p[0];
    adam_step(params, grads, s, lr);
    steps.push_back(before - p[0]);
  }
  // Hand-evaluated recurrence: after one gradient g, m_t = 0.1 g 0.9^(t-1) and
  // v_t = 0.001 g^2 0.999^(t-1).
  for (int t = 1; t <= 3; ++t) {
    const double m = 0.1 * g0 * std::pow(0.9, t - 1);
    const double v = 0.001 * g0 * g0 * std::pow(0.999, t - 1);
    const double expected = lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(steps[static_cast<std::size_t>(t - 1)], expected, 1e-12);
  }
  EXPECT_NEAR(steps[1], 0.670, 1e-3);
  EXPECT_NEAR(steps[2], 0.518, 1e-3);
  EXPECT_GT(steps[0], steps[1]);
  EXPECT_GT(steps[1], steps[2]);
  EXPECT_GT(steps[2], 0.0);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{1.0};
  AdamState s;
  std::vector<std::span<double>> params{p};
  std::vector<std::span<const double>> grads{g};
  EXPECT_THROW(adam_step(params, grads, s, 0.1), Error);
}

TEST(EarlyStopping, StopsAtPatienceOnRisingSchedule) {
  EarlyStopping stop(3);
  const std::vector<double> schedule{1.0, 0.8, 0.7, 0.75, 0.9, 1.2, 1.5};
  std::size_t stopped_at = 0;
  for (std::size_t e = 0; e < schedule.size(); ++e) {
    stop.observe(schedule[e]);
    if (stop.should_stop()) {
      stopped_at = e + 1;
      break;
    }
  }
  EXPECT_EQ(stopped_at, 6u);
  EXPECT_EQ(stop.best_epoch(), 3u);
  EXPECT_EQ(stop.best_loss(), 0.7);
}

TEST(EarlyStopping, TinyImprovementsDoNotCount) {
  EarlyStopping stop(2);
  EXPECT_TRUE(stop.observe(1.0));
  EXPECT_FALSE(stop.observe(1.0 - 1e-7));
  EXPECT_FALSE(stop.observe(1.0 - 5e-7));
  EXPECT_TRUE(stop.should_stop());
  EXPECT_EQ(stop.best_epoch(), 1u);
}

TEST(Train, SeparableToySetReachesFullAccuracy) {
  Matrix x;
  std::vector<int> y;
  separable(1, x, y);
  MlpConfig cfg = small_config({16, 16}, LossKind::CrossEntropy, 3);
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 16;
  cfg.max_epochs = 200;
  cfg.early_stop_patience = 200;
  auto m = train(x, y, x, y, {"neg", "pos"}, cfg);
  const auto [l, acc] = evaluate_loss(m, x, y);
  EXPECT_EQ(acc, 1.0) << "loss " << l;
  EXPECT_EQ(predict(m, x).class_ids, y);
}

TEST(Train, DeterministicGivenSeed) {
  Matrix x;
  std::vector<int> y;
  separable(2, x, y);
  MlpConfig cfg = small_config({8}, LossKind::CrossEntropy, 11);
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 10;
  cfg.max_epochs = 5;
  cfg.early_stop_patience = 5;
  auto a = train(x, y, x, y, {"n", "p"}, cfg);
  auto b = train(x, y, x, y, {"n", "p"}, cfg);
  EXPECT_EQ(flat_params(a), flat_params(b));
  cfg.seed = 12;
  auto c = train(x, y, x, y, {"n", "p"}, cfg);
  EXPECT_NE(flat_params(a), flat_params(c));
}

TEST(Train, PatienceOneRestoresFirstEpoch) {
  Matrix x;
  std::vector<int> y;
  separable(3, x, y);
  // Validation labels are flipped, so the validation loss rises as soon as training learns.
  std::vector<int> flipped(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 1 - y[i];
  MlpConfig cfg = small_config({8}, LossKind::CrossEntropy, 5);
  cfg.learning_rate = 5e-2;
  cfg.batch_size = 10;
  cfg.max_epochs = 1;
  cfg.early_stop_patience = 1;
  auto one_epoch = train(x, y, x, flipped, {"n", "p"}, cfg);
  cfg.max_epochs = 50;
  auto stopped = train(x, y, x, flipped, {"n", "p"}, cfg);
  ASSERT_EQ(stopped.history.epochs.size(), 2u);
  EXPECT_GT(stopped.history.epochs[1].val_loss, stopped.history.epochs[0].val_loss);
  EXPECT_TRUE(stopped.history.stopped_early);
  EXPECT_EQ(stopped.history.best_epoch, 1u);
  EXPECT_EQ(flat_params(stopped), flat_params(one_epoch));
  const auto [restored_loss, acc] = evaluate_loss(stopped, x, flipped);
  EXPECT_EQ(restored_loss, stopped.history.epochs[0].val_loss);
}

TEST(Train, NeverReturnsWorseThanBestEpoch) {
  Rng rng(12);
  Matrix x(120, 3);
  std::vector<int> y(120);
  for (Eigen::Index i = 0; i < 120; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(3));
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal(y[static_cast<std::size_t>(i)] * 0.3, 1.0);
  }
  MlpConfig cfg = small_config({16}, LossKind::CrossEntropy, 8);
  cfg.learning_rate = 2e-2;
  cfg.batch_size = 9;  // 120 = 13 * 9 + 3, exercises the short trailing batch
  cfg.max_epochs = 40;
  cfg.early_stop_patience = 4;
  const Matrix xv = x.topRows(40);
  const std::vector<int> yv(y.begin(), y.begin() + 40);
  auto m = train(x, y, xv, yv, {"a", "b", "c"}, cfg);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : m.history.epochs) best = std::min(best, e.val_loss);
  EXPECT_LE(evaluate_loss(m, xv, yv).first, best);
}

TEST(Train, TrailingSingleRowIsMergedIntoPreviousBatch) {
  Matrix x;
  std::vector<int> y;
  separable(4, x, y);
  const Matrix x65 = x.topRows(65);
  const std::vector<int> y65(y.begin(), y.begin() + 65);
  MlpConfig cfg = small_config({4}, LossKind::CrossEntropy, 1);
  cfg.batch_size = 64;
  cfg.max_epochs = 2;
  cfg.early_stop_patience = 2;
  EXPECT_NO_THROW(train(x65, y65, x65, y65, {"n", "p"}, cfg));
}

TEST(Train, DatasetEntryPointWarnsOnValidationOnlyClass) {
  const auto tr = testutil::make_dataset({"f"}, {{0.0}, {0.1}, {0.9}, {1.0}}, {"a", "a", "b", "b"});
  const auto va = testutil::make_dataset({"f"}, {{0.0}, {0.5}, {1.0}}, {"a", "c", "b"});
  MlpConfig cfg = small_config({4}, LossKind::CrossEntropy, 1);
  cfg.max_epochs = 2;
  cfg.early_stop_patience = 1;
  const auto m = train(tr, va, cfg);
  EXPECT_EQ(m.classes, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(m.history.warnings.size(), 1u);
  EXPECT_NE(m.history.warnings[0].find("'c'"), std::string::npos);
}

TEST(Predict, ArgmaxWithLowestIndexOnTies) {
  Eigen::MatrixXd p(3, 3);
  p << 0.1, 0.7, 0.2, 0.5, 0.5, 0.0, 0.2, 0.4, 0.4;
  EXPECT_EQ(detail::argmax_row(p, 0), 1);
  EXPECT_EQ(detail::argmax_row(p, 1), 0);
  EXPECT_EQ(detail::argmax_row(p, 2), 1);
}

TEST(Predict, AgreesWithInferenceForward) {
  Rng rng(13);
  auto m = MlpModel::create(3, {"a", "b", "c", "d"}, small_config({8}, LossKind::CrossEntropy, 2));
  Matrix x = random_matrix(rng, 20000, 3);
  const auto pred = predict(m, x, 4096);
  const Eigen::MatrixXd probs = forward(m, x, Mode::Infer).probabilities;
  EXPECT_TRUE((pred.probabilities.array() == probs.array()).all());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    EXPECT_EQ(pred.class_ids[static_cast<std::size_t>(i)], best);
  }
  EXPECT_THROW(predict(m, random_matrix(rng, 2, 4)), Error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Matrix x;
  std::vector<int> y;
  separable(5, x, y);
  MlpConfig cfg = small_config({6, 4}, LossKind::MeanSquaredError, 3);
  cfg.max_epochs = 3;
  cfg.early_stop_patience = 3;
  auto m = train(x, y, x, y, {"n", "p"}, cfg);
  testutil::TempDir dir;
  checkpoint::save(m, dir / "m.bin");
  auto back = checkpoint::load(dir / "m.bin");
  EXPECT_EQ(flat_params(back), flat_params(m));
  EXPECT_EQ(back.classes, m.classes);
  EXPECT_EQ(back.config.loss, LossKind::MeanSquaredError);
  EXPECT_EQ(back.history.epochs.size(), m.history.epochs.size());
  EXPECT_TRUE((predict(back, x).probabilities.array() == predict(m, x).probabilities.array()).all());

  testutil::write_file(dir / "bad.bin", "not a model");
  EXPECT_THROW(checkpoint::load(dir / "bad.bin"), Error);
  const auto bytes = testutil::read_file(dir / "m.bin");
  testutil::write_file(dir / "short.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(checkpoint::load(dir / "short.bin"), Error);
}
