#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "clustids/cluster.hpp"
#include "clustids/dataset.hpp"
#include "clustids/error.hpp"
#include "clustids/ingest.hpp"
#include "clustids/metrics.hpp"
#include "clustids/mlp.hpp"
#include "clustids/rng.hpp"

namespace clustids {

inline constexpr const char* kReportSchema = "clustids.report/1";

// Two leading principal components of a (sub)sample, for scatter-plot exports.
struct Projection {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // dim x 2
  Eigen::Vector2d explained_variance = Eigen::Vector2d::Zero();

  Eigen::MatrixXd project(const Matrix& x) const {
    Eigen::MatrixXd centered = x;
    centered.rowwise() -= mean;
    return centered * components;
  }
};

// Covariance eigendecomposition on at most `max_rows` rows drawn under `seed`.
inline Projection fit_pca(const Matrix& x, std::size_t max_rows = 50000, std::uint64_t seed = 0) {
  if (x.rows() < 2) throw Error("pca: need at least 2 rows");
  if (x.cols() < 2) throw Error("pca: need at least 2 features");
  std::vector<std::size_t> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > max_rows) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_rows; ++i) {
      std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.uniform_index(idx.size() - i))]);
    }
    idx.resize(max_rows);
    std::sort(idx.begin(), idx.end());
  }
  Eigen::MatrixXd sample(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) sample.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  Projection p;
  p.mean = sample.colwise().mean();
  sample.rowwise() -= p.mean;
  const Eigen::MatrixXd cov = sample.transpose() * sample / static_cast<double>(sample.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come in ascending order.
  const Eigen::Index d = cov.rows();
  p.components.resize(d, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    // Sign convention: largest-magnitude loading positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.col(c) = v;
    p.explained_variance(c) = eig.eigenvalues()(d - 1 - c);
  }
  return p;
}

// Optional side outputs written next to the report.
struct ReportExtras {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ElbowPoint> elbow;
  struct ProjectedSet {
    std::string split;
    Eigen::MatrixXd coords;  // n x 2
    std::vector<std::string> labels;
  };
  std::vector<ProjectedSet> pca;
};

namespace detail {

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(17);
  return out;
}

inline nlohmann::json averaged_json(const AveragedMetrics& a) {
  return {{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}, {"fpr", a.fpr}};
}

inline AveragedMetrics averaged_from(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>(),
          j.at("fpr").get<double>()};
}

}  // namespace detail

inline nlohmann::json report_json(const MetricsReport& r, const ConfusionMatrix& cm, const TrainingHistory& history,
                                  const ReportExtras& extras = {}) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    nlohmann::json entry = {{"name", m.name},           {"support", m.support},   {"tp", m.tp},
                            {"fp", m.fp},               {"fn", m.fn},             {"tn", m.tn},
                            {"precision", m.precision}, {"recall", m.recall},     {"fpr", m.fpr},
                            {"f1", m.f1},               {"zero_division", m.zero_division}};
    if (c < r.roc.size()) {
      entry["auc"] = r.roc[c].auc ? nlohmann::json(*r.roc[c].auc) : nlohmann::json(nullptr);
    }
    classes.push_back(std::move(entry));
  }
  nlohmann::json j = {{"schema", kReportSchema},
                      {"accuracy", r.accuracy},
                      {"total", r.total},
                      {"zero_division", r.zero_division},
                      {"weighted", detail::averaged_json(r.weighted)},
                      {"macro", detail::averaged_json(r.macro)},
                      {"classes", classes},
                      {"has_roc", !r.roc.empty()},
                      {"confusion", {{"classes", cm.classes}, {"counts", cm.counts}}},
                      {"metadata", extras.metadata}};
  if (!history.empty()) j["history"] = history.to_json();
  if (!extras.elbow.empty()) {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& p : extras.elbow) e.push_back({{"k", p.k}, {"score", p.score}});
    j["elbow"] = e;
  }
  return j;
}

// Writes report.json plus confusion.csv, roc.csv, history.csv, elbow.csv and
// pca.csv (the last three only when there is something to write).
inline void emit_report(const MetricsReport& r, const ConfusionMatrix& cm, const TrainingHistory& history,
                        const std::filesystem::path& dir, const ReportExtras& extras = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
  {
    auto out = detail::open_out(dir / "report.json");
    out << report_json(r, cm, history, extras).dump(2) << '\n';
  }
  {
    auto out = detail::open_out(dir / "confusion.csv");
    out << "true\\predicted";
    for (const auto& c : cm.classes) out << ',' << detail::csv_quote(c);
    out << '\n';
    for (std::size_t i = 0; i < cm.size(); ++i) {
      out << detail::csv_quote(cm.classes[i]);
      for (auto v : cm.counts[i]) out << ',' << v;
      out << '\n';
    }
  }
  if (!r.roc.empty()) {
    auto out = detail::open_out(dir / "roc.csv");
    out << "class,threshold,fpr,tpr\n";
    for (std::size_t c = 0; c < r.roc.size(); ++c) {
      for (const auto& p : r.roc[c].points) {
        out << detail::csv_quote(r.per_class[c].name) << ',' << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
      }
    }
  }
  if (!history.empty()) {
    auto out = detail::open_out(dir / "history.csv");
    out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (const auto& e : history.epochs) {
      out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ',' << e.val_accuracy
          << '\n';
    }
  }
  if (!extras.elbow.empty()) write_elbow_csv(dir / "elbow.csv", extras.elbow);
  if (!extras.pca.empty()) {
    auto out = detail::open_out(dir / "pca.csv");
    out << "split,label,pc1,pc2\n";
    for (const auto& set : extras.pca) {
      for (Eigen::Index i = 0; i < set.coords.rows(); ++i) {
        out << set.split << ',' << detail::csv_quote(set.labels[static_cast<std::size_t>(i)]) << ','
            << set.coords(i, 0) << ',' << set.coords(i, 1) << '\n';
      }
    }
  }
}

// Rebuilds the metrics report from report.json (and roc.csv when present).
inline MetricsReport read_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw Error("cannot open '" + (dir / "report.json").string() + "'");
  const auto j = nlohmann::json::parse(in);
  if (j.value("schema", "") != kReportSchema) throw Error("report: unsupported schema");
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.total = j.at("total").get<std::uint64_t>();
  r.zero_division = j.at("zero_division").get<bool>();
  r.weighted = detail::averaged_from(j.at("weighted"));
  r.macro = detail::averaged_from(j.at("macro"));
  for (const auto& c : j.at("classes")) {
    ClassMetrics m;
    m.name = c.at("name").get<std::string>();
    m.support = c.at("support").get<std::uint64_t>();
    m.tp = c.at("tp").get<std::uint64_t>();
    m.fp = c.at("fp").get<std::uint64_t>();
    m.fn = c.at("fn").get<std::uint64_t>();
    m.tn = c.at("tn").get<std::uint64_t>();
    m.precision = c.at("precision").get<double>();
    m.recall = c.at("recall").get<double>();
    m.fpr = c.at("fpr").get<double>();
    m.f1 = c.at("f1").get<double>();
    m.zero_division = c.at("zero_division").get<bool>();
    r.per_class.push_back(std::move(m));
  }
  if (j.value("has_roc", false)) {
    r.roc.resize(r.per_class.size());
    const auto classes = j.at("classes");
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
      if (!classes[c].at("auc").is_null()) r.roc[c].auc = classes[c].at("auc").get<double>();
    }
    std::ifstream roc(dir / "roc.csv");
    if (!roc) throw Error("report: roc.csv missing");
    std::string line;
    std::getline(roc, line);
    while (std::getline(roc, line)) {
      const auto f = csv::split_line(line);
      if (f.size() != 4) throw Error("report: malformed roc.csv line");
      auto it = std::find_if(r.per_class.begin(), r.per_class.end(), [&](const ClassMetrics& m) { return m.name == f[0]; });
      if (it == r.per_class.end()) throw Error("report: roc.csv names unknown class '" + f[0] + "'");
      r.roc[static_cast<std::size_t>(it - r.per_class.begin())].points.push_back(
          {csv::parse_cell(f[1]), csv::parse_cell(f[2]), csv::parse_cell(f[3])});
    }
  }
  return r;
}

// Metrics plus one-vs-all ROC for every class.
inline MetricsReport evaluate(std::span<const int> truth, std::span<const int> predicted,
                              const Eigen::MatrixXd& probabilities, const std::vector<std::string>& classes,
                              ConfusionMatrix* cm_out = nullptr) {
  auto cm = confusion(truth, predicted, classes);
  auto r = per_class_metrics(cm);
  for (std::size_t c = 0; c < classes.size(); ++c) r.roc.push_back(roc_auc(truth, probabilities, static_cast<int>(c)));
  if (cm_out) *cm_out = std::move(cm);
  return r;
}

}  // namespace clustids
