#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clustids/cluster.hpp"
#include "clustids/dataset.hpp"
#include "clustids/error.hpp"
#include "clustids/featsel.hpp"
#include "clustids/ingest.hpp"
#include "clustids/metrics.hpp"
#include "clustids/mlp.hpp"
#include "clustids/preprocess.hpp"
#include "clustids/report.hpp"
#include "clustids/rng.hpp"
#include "clustids/train.hpp"

namespace clustids {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string& stage, const std::string& message)>;

inline Logger stderr_logger() {
  return [](const std::string& stage, const std::string& message) { std::cerr << "[" << stage << "] " << message << '\n'; };
}

// One experiment: MLP alone, or MLP fed with a k-cluster pseudo-label.
struct ExperimentCell {
  std::optional<ClusterAlgorithm> algorithm;  // nullopt = MLP only
  std::size_t k = 0;

  std::string method(std::size_t base_features) const {
    if (!algorithm) return "MLP(" + std::to_string(base_features) + " features)";
    return *algorithm == ClusterAlgorithm::Birch ? "Birch+MLP" : "K-means+MLP";
  }

  std::string slug() const {
    if (!algorithm) return "mlp";
    return to_string(*algorithm) + "_k" + std::to_string(k);
  }

  nlohmann::json to_json() const {
    if (!algorithm) return {{"algorithm", "none"}};
    return {{"algorithm", to_string(*algorithm)}, {"k", k}};
  }

  static ExperimentCell from_json(const nlohmann::json& j) {
    ExperimentCell c;
    const auto alg = j.value("algorithm", std::string("none"));
    if (alg != "none" && alg != "mlp") {
      c.algorithm = parse_cluster_algorithm(alg);
      c.k = j.at("k").get<std::size_t>();
      if (c.k == 0) throw Error("grid: k must be >= 1");
    }
    return c;
  }
};

// Declarative description of a full run.
struct RunConfig {
  std::vector<fs::path> datasets;
  std::optional<fs::path> label_map;  // built-in CICIDS-2017 grouping when absent
  std::string label_column = "Label";
  std::uint64_t seed = 42;
  bool drop_duplicates = false;
  bool resample = true;
  std::optional<std::string> majority_class;  // most frequent class when absent
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  Binning binning;
  double ig_threshold = 0.1;
  ClusterConfig clustering;
  std::size_t k = 12;
  std::vector<std::size_t> elbow_k{2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14};
  PseudoLabelEncoding encoding = PseudoLabelEncoding::ScaledOrdinal;
  MlpConfig mlp;
  std::vector<ExperimentCell> grid;
  bool pca = false;
  fs::path output_dir = "out";

  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

  // Checks values; with `check_inputs`, also that the input files exist.
  void validate(bool check_inputs) const {
    if (check_inputs) {
      if (datasets.empty()) throw StageError("config", "no dataset paths given");
      for (const auto& p : datasets) {
        if (!fs::exists(p)) throw StageError("config", "dataset '" + p.string() + "' does not exist");
      }
      if (label_map && !fs::exists(*label_map)) {
        throw StageError("config", "label map '" + label_map->string() + "' does not exist");
      }
    }
    if (elbow_k.empty()) throw StageError("config", "elbow k range is empty");
    for (auto k : elbow_k) {
      if (k == 0) throw StageError("config", "elbow k values must be >= 1");
    }
    try {
      SplitSpec{split_ratios, 0}.validate();
      binning.validate();
      clustering.birch.validate();
      clustering.kmeans.validate();
      mlp.validate();
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError("config", e.what());
    }
    if (!(ig_threshold >= 0.0)) throw StageError("config", "ig_threshold must be >= 0");
  }

  nlohmann::json to_json() const {
    std::vector<std::string> paths;
    for (const auto& p : datasets) paths.push_back(p.string());
    nlohmann::json grid_json = nlohmann::json::array();
    for (const auto& c : grid) grid_json.push_back(c.to_json());
    nlohmann::json j = {
        {"datasets", paths},
        {"label_column", label_column},
        {"seed", seed},
        {"drop_duplicates", drop_duplicates},
        {"resample", resample},
        {"split_ratios", split_ratios},
        {"binning",
         {{"strategy", binning.strategy == BinStrategy::Quantile ? "quantile" : "equal-width"},
          {"bins", binning.bin_count}}},
        {"ig_threshold", ig_threshold},
        {"clustering",
         {{"algorithm", to_string(clustering.algorithm)},
          {"k", k},
          {"threshold", clustering.birch.threshold},
          {"branching_factor", clustering.birch.branching_factor},
          {"max_iter", clustering.kmeans.max_iter},
          {"kmeans_init", clustering.kmeans.init == KMeansInit::PlusPlus ? "k-means++" : "random"},
          {"kmeans_n_init", clustering.kmeans.n_init}}},
        {"elbow_k", elbow_k},
        {"encoding", to_string(encoding)},
        {"mlp", mlp.to_json()},
        {"grid", grid_json},
        {"pca", pca},
        {"output_dir", output_dir.string()}};
    if (label_map) j["label_map"] = label_map->string();
    if (majority_class) j["majority_class"] = *majority_class;
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      for (const auto& p : j.value("datasets", std::vector<std::string>{})) c.datasets.emplace_back(p);
      if (j.contains("label_map")) c.label_map = j.at("label_map").get<std::string>();
      c.label_column = j.value("label_column", c.label_column);
      c.seed = j.value("seed", c.seed);
      c.drop_duplicates = j.value("drop_duplicates", c.drop_duplicates);
      c.resample = j.value("resample", c.resample);
      if (j.contains("majority_class")) c.majority_class = j.at("majority_class").get<std::string>();
      c.split_ratios = j.value("split_ratios", c.split_ratios);
      if (j.contains("binning")) {
        const auto& b = j.at("binning");
        const auto strategy = b.value("strategy", std::string("equal-width"));
        if (strategy == "quantile") {
          c.binning.strategy = BinStrategy::Quantile;
        } else if (strategy == "equal-width") {
          c.binning.strategy = BinStrategy::EqualWidth;
        } else {
          throw Error("unknown binning strategy '" + strategy + "'");
        }
        c.binning.bin_count = b.value("bins", c.binning.bin_count);
      }
      c.ig_threshold = j.value("ig_threshold", c.ig_threshold);
      if (j.contains("clustering")) {
        const auto& cl = j.at("clustering");
        c.clustering.algorithm = parse_cluster_algorithm(cl.value("algorithm", std::string("birch")));
        c.k = cl.value("k", c.k);
        c.clustering.birch.threshold = cl.value("threshold", c.clustering.birch.threshold);
        c.clustering.birch.branching_factor = cl.value("branching_factor", c.clustering.birch.branching_factor);
        c.clustering.kmeans.max_iter = cl.value("max_iter", c.clustering.kmeans.max_iter);
        const auto init = cl.value("kmeans_init", std::string("random"));
        if (init == "k-means++" || init == "kmeans++") {
          c.clustering.kmeans.init = KMeansInit::PlusPlus;
        } else if (init == "random") {
          c.clustering.kmeans.init = KMeansInit::Random;
        } else {
          throw Error("unknown k-means init '" + init + "'");
        }
        c.clustering.kmeans.n_init = cl.value("kmeans_n_init", c.clustering.kmeans.n_init);
      }
      c.elbow_k = j.value("elbow_k", c.elbow_k);
      c.encoding = parse_encoding(j.value("encoding", to_string(c.encoding)));
      if (j.contains("mlp")) c.mlp = MlpConfig::from_json(j.at("mlp"));
      for (const auto& cell : j.value("grid", nlohmann::json::array())) c.grid.push_back(ExperimentCell::from_json(cell));
      c.pca = j.value("pca", c.pca);
      c.output_dir = j.value("output_dir", c.output_dir.string());
    } catch (const nlohmann::json::exception& e) {
      throw StageError("config", e.what());
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError("config", e.what());
    }
    return c;
  }

  static RunConfig load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw StageError("config", "cannot open '" + path.string() + "'");
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw StageError("config", e.what());
    }
  }
};

// ---------------------------------------------------------------------------
// Split files: a provenance line, a CSV header, then one record per row.

enum class SplitRole { Train, Validation, Test };

inline std::string to_string(SplitRole r) {
  switch (r) {
    case SplitRole::Train: return "train";
    case SplitRole::Validation: return "validation";
    case SplitRole::Test: return "test";
  }
  return "?";
}

inline SplitRole parse_split_role(const std::string& s) {
  if (s == "train") return SplitRole::Train;
  if (s == "validation") return SplitRole::Validation;
  if (s == "test") return SplitRole::Test;
  throw Error("unknown split role '" + s + "'");
}

inline constexpr std::string_view kSplitTag = "#clustids-split";

inline void write_split(const fs::path& path, const FlowDataset& d, SplitRole role) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << kSplitTag << " role=" << to_string(role) << " rows=" << d.size() << '\n';
  for (const auto& name : d.schema.feature_names) out << detail::csv_quote(name) << ',';
  out << detail::csv_quote(d.schema.label_column) << '\n';
  char buf[64];
  std::string line;
  for (Eigen::Index i = 0; i < d.rows.rows(); ++i) {
    line.clear();
    for (Eigen::Index j = 0; j < d.rows.cols(); ++j) {
      // Shortest representation that parses back to the same double.
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d.rows(i, j));
      line.append(buf, end);
      line.push_back(',');
    }
    line += detail::csv_quote(d.labels[static_cast<std::size_t>(i)]);
    line.push_back('\n');
    out << line;
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

struct SplitFile {
  SplitRole role = SplitRole::Train;
  FlowDataset data;
};

inline SplitFile read_split(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::string tag;
  std::getline(in, tag);
  if (!tag.starts_with(kSplitTag)) throw Error(path.string() + ": missing split provenance tag");
  SplitFile f;
  const auto at = tag.find("role=");
  if (at == std::string::npos) throw Error(path.string() + ": provenance tag has no role");
  f.role = parse_split_role(tag.substr(at + 5, tag.find(' ', at) - (at + 5)));
  // Peek at the header to build the schema, then rewind to it.
  const auto header_pos = in.tellg();
  const auto header = csv::read_header(in, path.string());
  if (header.size() < 2) throw Error(path.string() + ": header too short");
  f.data.schema.feature_names.assign(header.begin(), header.end() - 1);
  f.data.schema.label_column = header.back();
  in.seekg(header_pos);
  f.data = load_csv(in, path.string(), f.data.schema, 1);
  return f;
}

// Loads a split that will be used to fit something; test splits are refused.
inline FlowDataset read_split_for_fitting(const fs::path& path) {
  auto f = read_split(path);
  if (f.role == SplitRole::Test) {
    throw Error(path.string() + " is tagged as a test split and cannot be used for fitting");
  }
  return std::move(f.data);
}

// ---------------------------------------------------------------------------
// Stages.

struct PreprocessResult {
  Splits splits;
  Scaler scaler;
  FeatureRanking ranking;
  std::vector<std::string> selected;
  nlohmann::json summary;
};

namespace detail {

template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline nlohmann::json counts_json(const FlowDataset& d) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, n] : class_counts(d)) j[name] = n;
  return j;
}

inline std::string counts_text(const FlowDataset& d) {
  std::ostringstream s;
  bool first = true;
  for (const auto& [name, n] : class_counts(d)) {
    s << (first ? "" : ", ") << name << "=" << n;
    first = false;
  }
  return s.str();
}

}  // namespace detail

// clean -> group -> resample -> split -> feature selection (fit on train) ->
// min-max scaling (fit on train). Works on an already loaded dataset.
inline PreprocessResult preprocess(const FlowDataset& raw, const LabelMap& map, const RunConfig& cfg, const Logger& log) {
  PreprocessResult out;
  auto& summary = out.summary;
  summary["rows_loaded"] = raw.size();
  summary["features_loaded"] = raw.width();

  auto cleaned = detail::run_stage("clean", [&] {
    auto d = clean(raw);
    log("clean", "removed " + std::to_string(raw.size() - d.size()) + " rows with missing or non-finite values; " +
                     std::to_string(d.size()) + " rows remain");
    if (cfg.drop_duplicates) {
      const auto before = d.size();
      d = drop_duplicates(d);
      log("clean", "removed " + std::to_string(before - d.size()) + " duplicate rows");
    }
    return d;
  });
  summary["rows_clean"] = cleaned.size();

  auto grouped = detail::run_stage("group", [&] {
    auto d = group_labels(cleaned, map);
    log("group", std::to_string(class_counts(d).size()) + " classes: " + detail::counts_text(d));
    return d;
  });
  summary["grouped_counts"] = detail::counts_json(grouped);

  auto balanced = detail::run_stage("resample", [&] {
    if (!cfg.resample) {
      log("resample", "disabled");
      return grouped;
    }
    std::string majority;
    if (cfg.majority_class) {
      majority = *cfg.majority_class;
    } else {
      std::size_t best = 0;
      for (const auto& [name, n] : class_counts(grouped)) {
        if (n > best) {
          best = n;
          majority = name;
        }
      }
    }
    auto r = undersample_majority(grouped, majority, cfg.stage_seed("undersample"));
    if (r.unchanged) {
      log("resample", "majority class '" + majority + "' already balanced; unchanged");
    } else {
      log("resample", "undersampled '" + majority + "' -> " + std::to_string(r.data.size()) + " rows");
    }
    return r.data;
  });
  summary["resampled_counts"] = detail::counts_json(balanced);
  summary["rows_resampled"] = balanced.size();

  const SplitSpec spec{cfg.split_ratios, cfg.stage_seed("split")};
  auto splits = detail::run_stage("split", [&] {
    auto s = stratified_split(balanced, spec);
    log("split", "train=" + std::to_string(s.train.size()) + " validation=" + std::to_string(s.validation.size()) +
                     " test=" + std::to_string(s.test.size()));
    return s;
  });
  summary["split"] = spec.to_json();

  detail::run_stage("featsel", [&] {
    out.ranking = rank_features(splits.train, cfg.binning);
    out.selected = filter_by_threshold(out.ranking, cfg.ig_threshold);
    if (out.selected.empty()) throw Error("no feature reaches the information gain threshold");
    // Keep the original column order for the survivors.
    std::vector<std::string> ordered;
    for (const auto& name : splits.train.schema.feature_names) {
      if (std::find(out.selected.begin(), out.selected.end(), name) != out.selected.end()) ordered.push_back(name);
    }
    out.selected = ordered;
    log("featsel", std::to_string(splits.train.width()) + " -> " + std::to_string(out.selected.size()) +
                       " features (information gain >= " + std::to_string(cfg.ig_threshold) + ")");
    splits.train = splits.train.select_features(out.selected);
    splits.validation = splits.validation.select_features(out.selected);
    splits.test = splits.test.select_features(out.selected);
    return 0;
  });
  summary["features_selected"] = out.selected.size();

  detail::run_stage("normalize", [&] {
    out.scaler = Scaler::fit(splits.train);
    splits.train = out.scaler.apply(splits.train);
    splits.validation = out.scaler.apply(splits.validation);
    splits.test = out.scaler.apply(splits.test);
    log("normalize", "min-max scaler fit on " + std::to_string(splits.train.size()) + " training rows");
    return 0;
  });

  summary["split_counts"] = {{"train", detail::counts_json(splits.train)},
                             {"validation", detail::counts_json(splits.validation)},
                             {"test", detail::counts_json(splits.test)}};
  summary["rows_total"] = splits.train.size() + splits.validation.size() + splits.test.size();
  out.splits = std::move(splits);
  return out;
}

// Loads the configured CSVs and writes the processed artifacts to output_dir.
inline PreprocessResult cmd_preprocess(const RunConfig& cfg, const Logger& log = stderr_logger()) {
  cfg.validate(true);
  auto raw = detail::run_stage("ingest", [&] {
    const auto schema = infer_schema(cfg.datasets.front(), cfg.label_column);
    auto d = load_csv(cfg.datasets, schema);
    log("ingest", "loaded " + std::to_string(d.size()) + " rows x " + std::to_string(d.width()) + " features from " +
                      std::to_string(cfg.datasets.size()) + " file(s)");
    return d;
  });
  const auto map = detail::run_stage("group", [&] { return cfg.label_map ? LabelMap::load(*cfg.label_map) : LabelMap::cicids2017(); });
  auto result = preprocess(raw, map, cfg, log);

  detail::run_stage("write", [&] {
    fs::create_directories(cfg.output_dir);
    write_split(cfg.output_dir / "train.csv", result.splits.train, SplitRole::Train);
    write_split(cfg.output_dir / "validation.csv", result.splits.validation, SplitRole::Validation);
    write_split(cfg.output_dir / "test.csv", result.splits.test, SplitRole::Test);
    {
      std::ofstream out(cfg.output_dir / "scaler.json");
      out << result.scaler.to_json().dump(2) << '\n';
    }
    result.ranking.write_csv(cfg.output_dir / "ranking.csv");
    {
      std::ofstream out(cfg.output_dir / "selected_features.txt");
      for (const auto& f : result.selected) out << f << '\n';
    }
    {
      std::ofstream out(cfg.output_dir / "preprocess.json");
      out << result.summary.dump(2) << '\n';
    }
    log("write", "artifacts written to " + cfg.output_dir.string());
    return 0;
  });
  return result;
}

struct ElbowResult {
  std::vector<ElbowPoint> curve;
  std::vector<std::size_t> suggestions;
};

inline ElbowResult elbow(const FlowDataset& train, const RunConfig& cfg) {
  const auto y = encode_labels(std::span<const std::string>(train.labels));
  ElbowResult r;
  r.curve = elbow_scan(train.rows, y.codes, cfg.elbow_k, cfg.clustering, cfg.stage_seed("cluster"));
  r.suggestions = suggest_elbows(r.curve);
  return r;
}

inline ElbowResult cmd_elbow(const RunConfig& cfg, const Logger& log = stderr_logger()) {
  cfg.validate(false);
  const auto train = detail::run_stage("elbow", [&] { return read_split_for_fitting(cfg.output_dir / "train.csv"); });
  auto r = detail::run_stage("elbow", [&] {
    auto res = elbow(train, cfg);
    const auto name = "elbow_" + to_string(cfg.clustering.algorithm);
    write_elbow_csv(cfg.output_dir / (name + ".csv"), res.curve);
    nlohmann::json j = {{"algorithm", to_string(cfg.clustering.algorithm)}, {"suggested_k", res.suggestions}};
    std::ofstream out(cfg.output_dir / (name + ".json"));
    out << j.dump(2) << '\n';
    return res;
  });
  for (const auto& p : r.curve) log("elbow", "k=" + std::to_string(p.k) + " information gain=" + std::to_string(p.score));
  std::string s;
  for (auto k : r.suggestions) s += (s.empty() ? "" : ", ") + std::to_string(k);
  log("elbow", "suggested k: " + (s.empty() ? std::string("none") : s));
  return r;
}

struct ExperimentResult {
  ExperimentCell cell;
  std::string method;
  MetricsReport report;
  ConfusionMatrix confusion;
  MlpModel model;
  std::optional<ClusterModel> cluster;
  std::size_t base_features = 0;
};

// Fits the clustering on the training rows only, appends pseudo-labels to all
// three splits, trains the MLP and evaluates on the test split.
inline ExperimentResult run_experiment(const Splits& splits, const ExperimentCell& cell, const RunConfig& cfg,
                                       const Logger& log = {}) {
  ExperimentResult r;
  r.cell = cell;
  r.base_features = splits.train.width();
  r.method = cell.method(r.base_features);
  const FlowDataset* train = &splits.train;
  const FlowDataset* validation = &splits.validation;
  const FlowDataset* test = &splits.test;
  FlowDataset aug_train;
  FlowDataset aug_val;
  FlowDataset aug_test;
  if (cell.algorithm) {
    detail::run_stage("cluster", [&] {
      ClusterConfig cc = cfg.clustering;
      cc.algorithm = *cell.algorithm;
      auto fit = cc.fit(splits.train.rows, cell.k, cfg.stage_seed("cluster"));
      if (fit.reduced_k && log) {
        log("cluster", "only " + std::to_string(fit.subclusters) + " subclusters; using k=" + std::to_string(fit.model.k()));
      }
      const std::size_t k = fit.model.k();
      aug_train = augment(splits.train, fit.assignment, k, cfg.encoding);
      aug_val = augment(splits.validation, assign(fit.model, splits.validation.rows), k, cfg.encoding);
      aug_test = augment(splits.test, assign(fit.model, splits.test.rows), k, cfg.encoding);
      r.cluster = std::move(fit.model);
      return 0;
    });
    train = &aug_train;
    validation = &aug_val;
    test = &aug_test;
  }
  MlpConfig mc = cfg.mlp;
  mc.seed = cfg.stage_seed("mlp");
  r.model = detail::run_stage("train", [&] {
    return clustids::train(*train, *validation, mc, [&](const EpochRecord& e) {
      if (log) {
        log("train", "epoch " + std::to_string(e.epoch) + " loss=" + std::to_string(e.train_loss) +
                         " val_loss=" + std::to_string(e.val_loss) + " val_acc=" + std::to_string(e.val_accuracy));
      }
    });
  });
  detail::run_stage("evaluate", [&] {
    const auto truth = encode_labels(std::span<const std::string>(test->labels), r.model.classes);
    const auto pred = predict(r.model, test->rows);
    r.report = evaluate(truth.codes, pred.class_ids, pred.probabilities, r.model.classes, &r.confusion);
    if (log) log("evaluate", r.method + (cell.algorithm ? " k=" + std::to_string(cell.k) : "") +
                                 " test accuracy=" + std::to_string(r.report.accuracy));
    return 0;
  });
  return r;
}

inline ExperimentCell configured_cell(const RunConfig& cfg, bool no_cluster) {
  ExperimentCell cell;
  if (!no_cluster) {
    cell.algorithm = cfg.clustering.algorithm;
    cell.k = cfg.k;
  }
  return cell;
}

inline Splits load_splits(const RunConfig& cfg) {
  return detail::run_stage("load", [&] {
    Splits s;
    s.train = read_split_for_fitting(cfg.output_dir / "train.csv");
    s.validation = read_split_for_fitting(cfg.output_dir / "validation.csv");
    const auto test = read_split(cfg.output_dir / "test.csv");
    if (test.role != SplitRole::Test) throw Error("test.csv is not tagged as a test split");
    s.test = test.data;
    return s;
  });
}

// Writes model.bin, cluster.json (when clustered), pipeline.json and the report.
inline void save_experiment(const ExperimentResult& r, const Splits& splits, const RunConfig& cfg, const fs::path& dir) {
  detail::run_stage("write", [&] {
    fs::create_directories(dir);
    checkpoint::save(r.model, dir / "model.bin");
    if (r.cluster) r.cluster->save(dir / "cluster.json");
    nlohmann::json meta = {{"cell", r.cell.to_json()},
                           {"method", r.method},
                           {"encoding", to_string(cfg.encoding)},
                           {"base_features", splits.train.schema.feature_names},
                           {"label_column", splits.train.schema.label_column}};
    std::ofstream(dir / "pipeline.json") << meta.dump(2) << '\n';
    ReportExtras extras;
    extras.metadata = {{"method", r.method}, {"cell", r.cell.to_json()}, {"seed", cfg.seed}};
    if (cfg.pca) {
      const auto proj = fit_pca(splits.train.rows, 50000, cfg.stage_seed("pca"));
      extras.pca.push_back({"train", proj.project(splits.train.rows), splits.train.labels});
      extras.pca.push_back({"test", proj.project(splits.test.rows), splits.test.labels});
    }
    emit_report(r.report, r.confusion, r.model.history, dir / "report", extras);
    return 0;
  });
}

inline ExperimentResult cmd_train(const RunConfig& cfg, bool no_cluster, const Logger& log = stderr_logger()) {
  cfg.validate(false);
  const auto splits = load_splits(cfg);
  const auto cell = configured_cell(cfg, no_cluster);
  auto r = run_experiment(splits, cell, cfg, log);
  save_experiment(r, splits, cfg, cfg.output_dir / "runs" / cell.slug());
  log("write", "run written to " + (cfg.output_dir / "runs" / cell.slug()).string());
  return r;
}

// Re-applies a saved run (model, optional clustering) to a split file.
inline MetricsReport cmd_evaluate(const fs::path& run_dir, const fs::path& split_path, const fs::path& out_dir,
                                  const Logger& log = stderr_logger()) {
  return detail::run_stage("evaluate", [&] {
    const auto model = checkpoint::load(run_dir / "model.bin");
    nlohmann::json meta;
    {
      std::ifstream in(run_dir / "pipeline.json");
      if (!in) throw Error("cannot open '" + (run_dir / "pipeline.json").string() + "'");
      meta = nlohmann::json::parse(in);
    }
    auto split = read_split(split_path);
    FlowDataset data = split.data.select_features(meta.at("base_features").get<std::vector<std::string>>());
    if (fs::exists(run_dir / "cluster.json")) {
      const auto cm = ClusterModel::load(run_dir / "cluster.json");
      data = augment(data, assign(cm, data.rows), cm.k(), parse_encoding(meta.at("encoding").get<std::string>()));
    }
    const auto truth = encode_labels(std::span<const std::string>(data.labels), model.classes);
    const auto pred = predict(model, data.rows);
    ConfusionMatrix cm;
    auto report = evaluate(truth.codes, pred.class_ids, pred.probabilities, model.classes, &cm);
    ReportExtras extras;
    extras.metadata = {{"run", run_dir.string()}, {"split", to_string(split.role)}};
    emit_report(report, cm, {}, out_dir, extras);
    log("evaluate", to_string(split.role) + " accuracy=" + std::to_string(report.accuracy));
    return report;
  });
}

struct GridRow {
  std::string method;
  std::optional<std::size_t> k;
  std::optional<AveragedMetrics> metrics;
  double accuracy = 0.0;
  std::string error;
};

inline void write_grid_csv(const fs::path& path, const std::vector<GridRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "method,k,precision,recall,f1,accuracy,status\n";
  for (const auto& r : rows) {
    out << detail::csv_quote(r.method) << ',' << (r.k ? std::to_string(*r.k) : "-") << ',';
    if (r.metrics) {
      out << 100.0 * r.metrics->precision << ',' << 100.0 * r.metrics->recall << ',' << 100.0 * r.metrics->f1 << ','
          << 100.0 * r.accuracy << ",ok\n";
    } else {
      out << ",,,," << detail::csv_quote("error: " + r.error) << '\n';
    }
  }
}

// Runs every grid cell on in-memory splits; a failing cell is recorded and skipped.
inline std::vector<GridRow> run_grid(const Splits& splits, const RunConfig& cfg, const Logger& log = {},
                                     std::vector<ExperimentResult>* results = nullptr) {
  std::vector<GridRow> rows;
  for (const auto& cell : cfg.grid) {
    GridRow row;
    row.method = cell.method(splits.train.width());
    if (cell.algorithm) row.k = cell.k;
    try {
      auto r = run_experiment(splits, cell, cfg, log);
      row.metrics = r.report.weighted;
      row.accuracy = r.report.accuracy;
      if (results) results->push_back(std::move(r));
    } catch (const std::exception& e) {
      row.error = e.what();
      if (log) log("grid", row.method + " failed: " + row.error);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<GridRow> cmd_grid(const RunConfig& cfg, const Logger& log = stderr_logger()) {
  cfg.validate(false);
  const auto splits = cfg.grid.empty() ? Splits{} : load_splits(cfg);
  std::vector<ExperimentResult> results;
  auto rows = run_grid(splits, cfg, log, &results);
  for (const auto& r : results) save_experiment(r, splits, cfg, cfg.output_dir / "grid" / r.cell.slug());
  detail::run_stage("write", [&] {
    fs::create_directories(cfg.output_dir);
    write_grid_csv(cfg.output_dir / "grid.csv", rows);
    return 0;
  });
  log("grid", std::to_string(rows.size()) + " rows written to " + (cfg.output_dir / "grid.csv").string());
  return rows;
}

}  // namespace clustids
