#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "test_support.hpp"

namespace hpguide {
namespace {

using namespace hpguide::testing;

double volume_sum(const std::vector<LeafBox>& boxes) {
  double v = 0.0;
  for (const auto& b : boxes) v += b.volume();
  return v;
}

TEST(LeafBoxes, SingleLeafCoversSpace) {
  const auto space = unit_space(2);
  const auto boxes = leaf_boxes(Tree(leaf(1.0)), space);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].lo, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(boxes[0].hi, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(boxes[0].volume(), 1.0);
}

TEST(LeafBoxes, OneSplitHalves) {
  const auto space = unit_space(1);
  const auto boxes = leaf_boxes(Tree(split(0, 0.5, leaf(0), leaf(1))), space);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0].lo[0], 0.0);
  EXPECT_EQ(boxes[0].hi[0], 0.5);
  EXPECT_EQ(boxes[1].lo[0], 0.5);
  EXPECT_EQ(boxes[1].hi[0], 1.0);
}

TEST(LeafBoxes, DepthTwoPartitionsSpace) {
  SpaceDef space = unit_space(2);
  space.params[1].upper = 1024.0;
  const auto boxes = leaf_boxes(Tree(split(0, 0.5, leaf(0), split(1, 256.0, leaf(1), leaf(2)))), space);
  ASSERT_EQ(boxes.size(), 3u);
  EXPECT_NEAR(volume_sum(boxes), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(boxes[1].volume(), 0.5 * 0.25);
}

TEST(LeafBoxes, RandomTreesPartitionMixedSpaces) {
  std::mt19937_64 rng(3);
  SpaceDef space = unit_space(3);
  space.params[2] = {"k", ParamKind::discrete, 2.0, 10.0, 2.0, DisplayScale::linear};
  for (int i = 0; i < 50; ++i) {
    const Tree tree(random_tree(space, 40, 20, rng));
    EXPECT_NEAR(volume_sum(leaf_boxes(tree, space)), 1.0, 1e-9);
  }
}

TEST(MarginalMean, HandIntegration) {
  const auto space = unit_space(2);
  const auto forest = make_forest({split(0, 0.5, leaf(0.0), leaf(1.0))}, space);
  const std::vector<std::size_t> h1{0};
  const std::vector<std::size_t> h2{1};
  EXPECT_DOUBLE_EQ(marginal_mean(forest, space, h2, std::vector<double>{0.3}), 0.5);
  EXPECT_DOUBLE_EQ(marginal_mean(forest, space, h1, std::vector<double>{0.25}), 0.0);
  EXPECT_DOUBLE_EQ(marginal_mean(forest, space, h1, std::vector<double>{0.75}), 1.0);
  EXPECT_THROW(marginal_mean(forest, space, h1, std::vector<double>{1.5}), ValidationError);
  const std::vector<std::size_t> bad{2};
  EXPECT_THROW(marginal_mean(forest, space, bad, std::vector<double>{0.5}), ValidationError);
}

TEST(MarginalMean, FullSubsetEqualsPredict) {
  std::mt19937_64 rng(8);
  SpaceDef space = unit_space(3);
  space.params[1] = {"k", ParamKind::discrete, 0.0, 6.0, 1.0, DisplayScale::linear};
  const auto forest = make_forest({random_tree(space, 30, 50, rng), random_tree(space, 30, 50, rng)}, space);
  const std::vector<std::size_t> all{0, 1, 2};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> x{u(rng), static_cast<double>(rng() % 7), u(rng)};
    EXPECT_NEAR(marginal_mean(forest, space, all, x), predict(forest, x), 1e-12);
  }
}

TEST(Decomposition, SingleActiveDimension) {
  const auto space = unit_space(2);
  const auto forest = make_forest({split(0, 0.3, leaf(0.0), split(0, 0.8, leaf(2.0), leaf(1.0)))}, space);
  const auto dec = variance_decomposition(forest, space, 2);
  const std::size_t h1[] = {0};
  const std::size_t h2[] = {1};
  const std::size_t both[] = {0, 1};
  EXPECT_NEAR(dec.find(h1)->raw_fraction, 1.0, 1e-12);
  EXPECT_EQ(dec.find(h2)->raw_fraction, 0.0);
  EXPECT_NEAR(dec.find(both)->raw_fraction, 0.0, 1e-12);
  EXPECT_FALSE(dec.zero_variance);
}

TEST(Decomposition, ConstantForestIsFlagged) {
  const auto space = unit_space(2);
  const auto forest = make_forest({split(0, 0.5, leaf(0.7), leaf(0.7)), leaf(0.7)}, space);
  const auto dec = variance_decomposition(forest, space, 2);
  EXPECT_TRUE(dec.zero_variance);
  for (const auto& c : dec.components) EXPECT_EQ(c.raw_fraction, 0.0);

  const std::vector<std::string> selected{"h1", "h2"};
  const auto report = importance_report(forest, space, selected, "score");
  EXPECT_TRUE(report.zero_variance);
  const Json doc = to_json(report);
  EXPECT_EQ(doc.at("zero_variance"), true);
}

TEST(Decomposition, DepthTwoTreeMatchesGridOracle) {
  const auto space = unit_space(2);
  const auto forest =
      make_forest({split(0, 0.5, split(1, 0.25, leaf(1.0), leaf(3.0)), split(1, 0.75, leaf(-2.0), leaf(0.5)))}, space);
  const GridOracle oracle(forest, space, 100);
  const auto dec = variance_decomposition(forest, space, 2);
  EXPECT_NEAR(dec.total_variance, oracle.total_variance, 1e-9);
  EXPECT_NEAR(dec.mean, oracle.mean, 1e-12);
  for (const auto& [dims, v] : oracle.components) {
    EXPECT_NEAR(dec.find(dims)->raw_fraction, v / oracle.total_variance, 1e-9);
  }
}

TEST(Decomposition, ThresholdsOutsideRangeAreHarmless) {
  const auto space = unit_space(2);
  // A split at 1.5 sends everything left; the right leaf has zero measure.
  const auto forest = make_forest({split(0, 1.5, split(1, 0.5, leaf(0.0), leaf(1.0)), leaf(100.0))}, space);
  const auto dec = variance_decomposition(forest, space, 2);
  EXPECT_NEAR(dec.total_variance, 0.25, 1e-12);
  const std::size_t h2[] = {1};
  EXPECT_NEAR(dec.find(h2)->raw_fraction, 1.0, 1e-12);
}

TEST(Decomposition, FullOrderSumsToOne) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t d = 1 + seed % 3;
    SpaceDef space = unit_space(d);
    if (seed % 2) space.params[0] = {"k", ParamKind::discrete, 0.0, 4.0, 1.0, DisplayScale::linear};
    const auto data = sample_uniform(space, 80, seed, [](std::span<const double> x, auto& r) {
      double y = std::normal_distribution<double>(0.0, 0.2)(r);
      double prod = 1.0;
      for (const double v : x) prod *= v;
      return y + prod + x[0];
    });
    ForestConfig config;
    config.n_trees = 15;
    const auto forest = fit_forest(data.X, data.y, space, space.metrics[0], config, seed);
    const auto dec = variance_decomposition(forest, space, d);
    ASSERT_FALSE(dec.zero_variance);
    double sum = 0.0;
    for (const auto& c : dec.components) {
      EXPECT_GE(c.raw_fraction, 0.0);
      EXPECT_LE(c.raw_fraction, 1.0);
      sum += c.variance;
    }
    EXPECT_NEAR(sum / dec.total_variance, 1.0, 1e-9) << "seed " << seed;
  }
}

TEST(Decomposition, RelabelingParamsPermutesScores) {
  const auto space = unit_space(3);
  const auto data = sample_uniform(space, 120, 4, [](std::span<const double> x, auto& r) {
    return 2 * x[0] + x[1] * x[1] + 0.1 * std::normal_distribution<double>()(r);
  });
  ForestConfig config;
  config.n_trees = 20;
  const auto a = fit_forest(data.X, data.y, space, space.metrics[0], config, 1);
  // Same trees with h1 and h3 swapped. Refitting swapped columns is not
  // enough: equal-gain ties go to the lower feature index.
  std::vector<std::vector<TreeNode>> relabeled;
  for (const auto& tree : a.trees) {
    auto nodes = tree.nodes();
    for (auto& node : nodes) {
      if (!node.is_leaf() && node.feature != 1) node.feature = 2 - node.feature;
    }
    relabeled.push_back(std::move(nodes));
  }
  const auto b = make_forest(relabeled, space);
  const auto da = variance_decomposition(a, space, 1);
  const auto db = variance_decomposition(b, space, 1);
  EXPECT_NEAR(da.total_variance, db.total_variance, 1e-12);
  const std::size_t i0[] = {0};
  const std::size_t i1[] = {1};
  const std::size_t i2[] = {2};
  EXPECT_NEAR(da.find(i0)->raw_fraction, db.find(i2)->raw_fraction, 1e-9);
  EXPECT_NEAR(da.find(i1)->raw_fraction, db.find(i1)->raw_fraction, 1e-9);
  EXPECT_NEAR(da.find(i2)->raw_fraction, db.find(i0)->raw_fraction, 1e-9);
}

// Three one-split trees with squared amplitudes 3:1:1 give raw fractions
// 0.6, 0.2, 0.2.
Forest additive_forest(const SpaceDef& space) {
  const double a = std::sqrt(3.0);
  return make_forest({split(0, 0.5, leaf(-a), leaf(a)), split(1, 0.5, leaf(-1), leaf(1)),
                      split(2, 0.5, leaf(-1), leaf(1))},
                     space);
}

TEST(ImportanceReport, RenormalizesOverSelection) {
  const auto space = unit_space(3);
  const auto forest = additive_forest(space);
  const std::vector<std::string> selected{"h1", "h2"};
  const auto report = importance_report(forest, space, selected, "score");
  ASSERT_EQ(report.entries.size(), 2u);
  EXPECT_NEAR(report.entries[0].raw_fraction, 0.6, 1e-12);
  EXPECT_NEAR(report.entries[1].raw_fraction, 0.2, 1e-12);
  EXPECT_NEAR(report.entries[0].displayed_score, 0.75, 1e-12);
  EXPECT_NEAR(report.entries[1].displayed_score, 0.25, 1e-12);
}

TEST(ImportanceReport, SingleSelectionScoresOne) {
  const auto space = unit_space(3);
  const std::vector<std::string> selected{"h3"};
  const auto report = importance_report(additive_forest(space), space, selected, "score");
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_DOUBLE_EQ(report.entries[0].displayed_score, 1.0);
}

TEST(ImportanceReport, PairsAndSerialization) {
  const auto space = unit_space(3);
  const std::vector<std::string> selected{"h1", "h2", "h3"};
  const auto report = importance_report(additive_forest(space), space, selected, "score", true);
  ASSERT_EQ(report.entries.size(), 6u);
  EXPECT_EQ(report.entries[3].params, (std::vector<std::string>{"h1", "h2"}));
  EXPECT_NEAR(report.entries[3].raw_fraction, 0.0, 1e-12);
  const Json doc = to_json(report);
  EXPECT_EQ(doc.at("metric"), "score");
  EXPECT_EQ(doc.at("entries").size(), 6u);
  EXPECT_TRUE(doc.at("entries")[0].contains("displayed_score"));
}

TEST(ImportanceReport, RejectsBadSelections) {
  const auto space = unit_space(2);
  const auto forest = make_forest({split(0, 0.5, leaf(0), leaf(1))}, space);
  EXPECT_THROW(importance_report(forest, space, std::vector<std::string>{}, "score"), ValidationError);
  EXPECT_THROW(importance_report(forest, space, std::vector<std::string>{"zz"}, "score"), ValidationError);
  EXPECT_THROW(importance_report(forest, space, std::vector<std::string>{"h1", "h1"}, "score"), ValidationError);
}

TEST(ImportanceReport, AllZeroSelectionFallsBackToUniform) {
  const auto space = unit_space(3);
  const auto forest = make_forest({split(0, 0.5, leaf(0), leaf(1))}, space);
  const auto report = importance_report(forest, space, std::vector<std::string>{"h2", "h3"}, "score");
  EXPECT_FALSE(report.zero_variance);
  EXPECT_DOUBLE_EQ(report.entries[0].displayed_score, 0.5);
  EXPECT_DOUBLE_EQ(report.entries[1].displayed_score, 0.5);
}

}  // namespace
}  // namespace hpguide
