#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "clustids/preprocess.hpp"
#include "support.hpp"

using namespace clustids;
using testutil::make_dataset;

namespace {

// Rows tagged by their original index in column 0.
FlowDataset indexed(const std::vector<std::pair<std::string, std::size_t>>& classes) {
  FlowDataset d;
  d.schema.feature_names = {"id"};
  std::size_t n = 0;
  for (const auto& [name, count] : classes) n += count;
  d.rows.resize(static_cast<Eigen::Index>(n), 1);
  std::size_t at = 0;
  for (const auto& [name, count] : classes) {
    for (std::size_t i = 0; i < count; ++i, ++at) {
      d.rows(static_cast<Eigen::Index>(at), 0) = static_cast<double>(at);
      d.labels.push_back(name);
    }
  }
  return d;
}

std::vector<double> ids(const FlowDataset& d) { return {d.rows.data(), d.rows.data() + d.rows.size()}; }

}  // namespace

TEST(Undersample, GoldenSelectionSeed7) {
  const auto d = indexed({{"M", 10}, {"m", 4}});
  const auto r = undersample_majority(d, "M", 7);
  EXPECT_FALSE(r.unchanged);
  EXPECT_EQ(ids(r.data), (std::vector<double>{0, 5, 7, 8, 10, 11, 12, 13}));
  const auto again = undersample_majority(d, "M", 7);
  EXPECT_EQ(ids(again.data), ids(r.data));
}

TEST(Undersample, MajorityEqualsSumOfOthers) {
  const auto d = indexed({{"A", 3}, {"Big", 50}, {"C", 7}, {"D", 1}});
  const auto r = undersample_majority(d, "Big", 1);
  const auto counts = class_counts(r.data);
  EXPECT_EQ(counts.at("Big"), 11u);
  EXPECT_EQ(counts.at("A"), 3u);
  EXPECT_EQ(counts.at("C"), 7u);
  EXPECT_EQ(counts.at("D"), 1u);
  // Minority rows are untouched and everything keeps input order.
  const auto v = ids(r.data);
  EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
}

TEST(Undersample, AlreadyBalancedIsUnchanged) {
  const auto d = indexed({{"A", 5}, {"B", 5}});
  const auto r = undersample_majority(d, "A", 3);
  EXPECT_TRUE(r.unchanged);
  EXPECT_EQ(ids(r.data), ids(d));
}

TEST(Undersample, MissingMajorityClassThrows) {
  const auto d = indexed({{"A", 5}});
  EXPECT_THROW(undersample_majority(d, "Z", 3), Error);
}

TEST(Undersample, SelectionIsRoughlyUniform) {
  const auto d = indexed({{"M", 10}, {"m", 4}});
  std::vector<int> kept(10, 0);
  const int trials = 20000;
  for (int s = 0; s < trials; ++s) {
    const auto r = undersample_majority(d, "M", static_cast<std::uint64_t>(s));
    for (double v : ids(r.data)) {
      if (v < 10) ++kept[static_cast<std::size_t>(v)];
    }
  }
  for (int k : kept) EXPECT_NEAR(static_cast<double>(k) / trials, 0.4, 0.02);
}

TEST(Scaler, FitsPerFeatureBounds) {
  const auto d = make_dataset({"a", "b", "c"}, {{2, 100, 5}, {4, 300, 5}, {6, 200, 5}}, {"x", "x", "x"});
  const auto s = Scaler::fit(d);
  EXPECT_EQ(s.min, (std::vector<double>{2, 100, 5}));
  EXPECT_EQ(s.max, (std::vector<double>{6, 300, 5}));
  const auto t = s.apply(d);
  EXPECT_EQ(t.rows(0, 0), 0.0);
  EXPECT_EQ(t.rows(1, 0), 0.5);
  EXPECT_EQ(t.rows(2, 0), 1.0);
  EXPECT_EQ(t.rows(2, 1), 0.5);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(t.rows(i, 2), 0.0);
}

TEST(Scaler, ClampsOutOfRangeValues) {
  const auto train = make_dataset({"a"}, {{2}, {6}}, {"x", "x"});
  const auto test = make_dataset({"a"}, {{8}, {-1}, {3}}, {"x", "x", "x"});
  const auto t = Scaler::fit(train).apply(test);
  EXPECT_EQ(t.rows(0, 0), 1.0);
  EXPECT_EQ(t.rows(1, 0), 0.0);
  EXPECT_EQ(t.rows(2, 0), 0.25);
}

TEST(Scaler, EmptyFitAndSchemaMismatchThrow) {
  FlowDataset empty;
  empty.schema.feature_names = {"a"};
  empty.rows.resize(0, 1);
  EXPECT_THROW(Scaler::fit(empty), Error);
  const auto s = Scaler::fit(make_dataset({"a"}, {{1}}, {"x"}));
  EXPECT_THROW(s.apply(make_dataset({"b"}, {{1}}, {"x"})), Error);
}

TEST(Scaler, JsonRoundTrip) {
  const auto s = Scaler::fit(make_dataset({"a", "b"}, {{0.1, -3}, {0.7, 9}}, {"x", "y"}));
  const auto r = Scaler::from_json(s.to_json());
  EXPECT_EQ(r.feature_names, s.feature_names);
  EXPECT_EQ(r.min, s.min);
  EXPECT_EQ(r.max, s.max);
}

TEST(SplitSpec, ValidatesRatios) {
  EXPECT_NO_THROW((SplitSpec{{0.8, 0.1, 0.1}, 0}.validate()));
  EXPECT_THROW((SplitSpec{{0.8, 0.1, 0.2}, 0}.validate()), Error);
  EXPECT_THROW((SplitSpec{{1.1, -0.1, 0.0}, 0}.validate()), Error);
  const SplitSpec s{{0.7, 0.2, 0.1}, 99};
  const auto r = SplitSpec::from_json(s.to_json());
  EXPECT_EQ(r.ratios, s.ratios);
  EXPECT_EQ(r.seed, s.seed);
}

// Per-class quotas for the balanced CICIDS-2017 class sizes at 80:10:10.
TEST(SplitQuotas, ReproducesPublishedTable) {
  const std::vector<std::size_t> sizes{556556, 379748, 158804, 13832, 2180, 1956, 36};
  const auto q = split_quotas(sizes, {0.8, 0.1, 0.1});
  using Row = std::array<std::size_t, 3>;
  EXPECT_EQ(q[0], (Row{445244, 55656, 55656}));  // Benign
  EXPECT_EQ(q[1], (Row{303798, 37975, 37975}));  // DoS/DDoS
  EXPECT_EQ(q[2], (Row{127043, 15881, 15880}));  // PortScan
  EXPECT_EQ(q[4], (Row{1744, 218, 218}));        // Web Attack
  EXPECT_EQ(q[5], (Row{1565, 196, 195}));        // Bot
  EXPECT_EQ(q[6], (Row{29, 3, 4}));              // Infiltration
  // Brute Force follows the ratios.
  EXPECT_EQ(q[3][0], 11066u);
  std::array<std::size_t, 3> totals{};
  for (const auto& row : q) {
    for (int p = 0; p < 3; ++p) totals[p] += row[p];
  }
  EXPECT_EQ(totals, (Row{890489, 111312, 111311}));
}

TEST(SplitQuotas, ConservesEveryClass) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> sizes(1 + rng.uniform_index(8));
    for (auto& s : sizes) s = 1 + rng.uniform_index(500);
    const auto q = split_quotas(sizes, {0.8, 0.1, 0.1});
    for (std::size_t c = 0; c < sizes.size(); ++c) EXPECT_EQ(q[c][0] + q[c][1] + q[c][2], sizes[c]);
  }
}

TEST(StratifiedSplit, PartitionsTheInput) {
  const auto d = indexed({{"A", 97}, {"B", 13}, {"C", 1}, {"D", 40}});
  const auto s = stratified_split(d, {{0.8, 0.1, 0.1}, 11});
  std::multiset<double> all;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    for (double v : ids(*part)) all.insert(v);
    const auto v = ids(*part);
    EXPECT_TRUE(std::is_sorted(v.begin(), v.end()));
    for (std::size_t i = 0; i < part->size(); ++i) {
      EXPECT_EQ(part->labels[i], d.labels[static_cast<std::size_t>(part->rows(static_cast<Eigen::Index>(i), 0))]);
    }
  }
  const auto expected = ids(d);
  EXPECT_EQ(all, std::multiset<double>(expected.begin(), expected.end()));
  EXPECT_EQ(std::set<double>(all.begin(), all.end()).size(), d.size());
  // The single-row class lands in exactly one split.
  int c_count = 0;
  for (const auto* part : {&s.train, &s.validation, &s.test}) c_count += static_cast<int>(class_counts(*part).count("C"));
  EXPECT_EQ(c_count, 1);
}

TEST(StratifiedSplit, DeterministicPerSeed) {
  const auto d = indexed({{"A", 50}, {"B", 30}});
  const auto a = stratified_split(d, {{0.8, 0.1, 0.1}, 4});
  const auto b = stratified_split(d, {{0.8, 0.1, 0.1}, 4});
  const auto c = stratified_split(d, {{0.8, 0.1, 0.1}, 5});
  EXPECT_EQ(ids(a.test), ids(b.test));
  EXPECT_EQ(ids(a.train), ids(b.train));
  EXPECT_NE(ids(a.test), ids(c.test));
}
