#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clustids/clustids.hpp"

namespace {

using namespace clustids;

// Command-line values; only the ones the user actually passed override the config file.
struct Overrides {
  std::string config_path;
  std::vector<std::string> datasets;
  std::string label_map;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<bool> resample;
  bool drop_duplicates = false;
  std::string majority;
  std::string binning;
  std::optional<std::size_t> bins;
  std::optional<double> ig_threshold;
  std::string algorithm;
  std::optional<std::size_t> k;
  std::optional<double> threshold;
  std::optional<std::size_t> branching_factor;
  std::string kmeans_init;
  std::optional<std::size_t> kmeans_n_init;
  std::vector<std::size_t> elbow_k;
  std::string encoding;
  std::vector<std::size_t> hidden;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> patience;
  std::string loss;
  bool pca = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("-o,--output-dir", o.output_dir, "Artifact directory");
  cmd->add_option("--seed", o.seed, "Master seed");
}

void add_cluster(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--algorithm", o.algorithm, "Clustering algorithm")->check(CLI::IsMember({"birch", "kmeans"}));
  cmd->add_option("--threshold", o.threshold, "Birch leaf radius threshold");
  cmd->add_option("--branching-factor", o.branching_factor, "Birch branching factor");
  cmd->add_option("--kmeans-init", o.kmeans_init, "K-means seeding")->check(CLI::IsMember({"random", "k-means++"}));
  cmd->add_option("--kmeans-n-init", o.kmeans_n_init, "K-means restarts");
}

void add_model(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--encoding", o.encoding, "Pseudo-label encoding")->check(CLI::IsMember({"scaled-ordinal", "one-hot"}));
  cmd->add_option("--hidden", o.hidden, "Hidden layer widths");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size");
  cmd->add_option("--epochs", o.epochs, "Maximum epochs");
  cmd->add_option("--patience", o.patience, "Early stopping patience");
  cmd->add_option("--loss", o.loss, "Training loss")->check(CLI::IsMember({"cross-entropy", "mse"}));
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : RunConfig::load(o.config_path);
  try {
    if (!o.datasets.empty()) {
      c.datasets.clear();
      for (const auto& p : o.datasets) c.datasets.emplace_back(p);
    }
    if (!o.label_map.empty()) c.label_map = o.label_map;
    if (!o.output_dir.empty()) c.output_dir = o.output_dir;
    if (o.seed) c.seed = *o.seed;
    if (o.resample) c.resample = *o.resample;
    if (o.drop_duplicates) c.drop_duplicates = true;
    if (!o.majority.empty()) c.majority_class = o.majority;
    if (!o.binning.empty()) c.binning.strategy = o.binning == "quantile" ? BinStrategy::Quantile : BinStrategy::EqualWidth;
    if (o.bins) c.binning.bin_count = *o.bins;
    if (o.ig_threshold) c.ig_threshold = *o.ig_threshold;
    if (!o.algorithm.empty()) c.clustering.algorithm = parse_cluster_algorithm(o.algorithm);
    if (o.k) c.k = *o.k;
    if (o.threshold) c.clustering.birch.threshold = *o.threshold;
    if (o.branching_factor) c.clustering.birch.branching_factor = *o.branching_factor;
    if (!o.kmeans_init.empty()) c.clustering.kmeans.init = o.kmeans_init == "random" ? KMeansInit::Random : KMeansInit::PlusPlus;
    if (o.kmeans_n_init) c.clustering.kmeans.n_init = *o.kmeans_n_init;
    if (!o.elbow_k.empty()) c.elbow_k = o.elbow_k;
    if (!o.encoding.empty()) c.encoding = parse_encoding(o.encoding);
    if (!o.hidden.empty()) c.mlp.hidden_sizes = o.hidden;
    if (o.lr) c.mlp.learning_rate = *o.lr;
    if (o.batch_size) c.mlp.batch_size = *o.batch_size;
    if (o.epochs) c.mlp.max_epochs = *o.epochs;
    if (o.patience) c.mlp.early_stop_patience = *o.patience;
    if (!o.loss.empty()) c.mlp.loss = parse_loss(o.loss);
    if (o.pca) c.pca = true;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustering-assisted MLP intrusion detection pipeline"};
  app.require_subcommand(1);
  Overrides o;
  bool no_cluster = false;
  std::string run_dir;
  std::string split_path;
  std::string report_dir;
  bool print_config = false;

  auto* pre = app.add_subcommand("preprocess", "Clean, group, resample, split, select features and normalize");
  add_common(pre, o);
  pre->add_option("-d,--dataset", o.datasets, "Input CSV files");
  pre->add_option("--label-map", o.label_map, "Label grouping file (original = group per line)");
  pre->add_option("--resample", o.resample, "Undersample the majority class (true/false)");
  pre->add_flag("--drop-duplicates", o.drop_duplicates, "Remove exact duplicate rows");
  pre->add_option("--majority-class", o.majority, "Class to undersample");
  pre->add_option("--binning", o.binning, "Discretization for information gain")
      ->check(CLI::IsMember({"equal-width", "quantile"}));
  pre->add_option("--bins", o.bins, "Bin count for information gain");
  pre->add_option("--ig-threshold", o.ig_threshold, "Minimum information gain to keep a feature");

  auto* elb = app.add_subcommand("elbow", "Information gain of cluster ids over a range of k");
  add_common(elb, o);
  add_cluster(elb, o);
  elb->add_option("--k-range", o.elbow_k, "k values to scan");

  auto* trn = app.add_subcommand("train", "Cluster, augment, train the MLP and evaluate on the test split");
  add_common(trn, o);
  add_cluster(trn, o);
  add_model(trn, o);
  trn->add_option("-k,--k", o.k, "Cluster count");
  trn->add_flag("--no-cluster", no_cluster, "Train the MLP-only baseline");
  trn->add_flag("--pca", o.pca, "Export a 2-D projection with the report");

  auto* grd = app.add_subcommand("grid", "Run the baseline and every configured (algorithm, k) cell");
  add_common(grd, o);
  add_cluster(grd, o);
  add_model(grd, o);

  auto* evl = app.add_subcommand("evaluate", "Apply a saved run to a split file");
  evl->add_option("--run", run_dir, "Run directory holding model.bin")->required()->check(CLI::ExistingDirectory);
  evl->add_option("--split", split_path, "Split file to score")->required()->check(CLI::ExistingFile);
  evl->add_option("--report-dir", report_dir, "Where to write the report")->required();

  for (auto* cmd : {pre, elb, trn, grd}) cmd->add_flag("--print-config", print_config, "Print the resolved configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    if (evl->parsed()) {
      cmd_evaluate(run_dir, split_path, report_dir);
      return EXIT_SUCCESS;
    }
    const RunConfig cfg = resolve(o);
    if (print_config) std::cout << cfg.to_json().dump(2) << '\n';
    if (pre->parsed()) {
      cmd_preprocess(cfg);
    } else if (elb->parsed()) {
      const auto r = cmd_elbow(cfg);
      for (const auto& p : r.curve) std::cout << p.k << ',' << p.score << '\n';
    } else if (trn->parsed()) {
      const auto r = cmd_train(cfg, no_cluster);
      std::cout << r.method << " accuracy=" << r.report.accuracy << " weighted_f1=" << r.report.weighted.f1 << '\n';
    } else if (grd->parsed()) {
      cmd_grid(cfg);
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return EXIT_SUCCESS;
}
