#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfvi/regression_forest.hpp"
#include "cfvi/simulation.hpp"
#include "test_util.hpp"

namespace cfvi {
namespace {

using test::small_params;

FeatureMatrix uniform_matrix(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng(seed);
  FeatureMatrix X(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) X(i, j) = rng.uniform();
  }
  return X;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t k = 0; k < order.size();) {
    std::size_t e = k;
    while (e + 1 < order.size() && v[order[e + 1]] == v[order[k]]) ++e;
    for (std::size_t q = k; q <= e; ++q) r[order[q]] = 0.5 * static_cast<double>(k + e);
    k = e + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(RegressionForest, ConstantTargetPredictsTheConstant) {
  const auto X = uniform_matrix(80, 3, 1);
  const std::vector<double> y(80, 2.5);
  const auto f = RegressionForest::fit(X, y, small_params(20));
  ASSERT_TRUE(f.degenerate_target().has_value());
  for (double v : oob_predict(f, X)) EXPECT_EQ(v, 2.5);
  const double x[3] = {0.1, 0.9, 0.4};
  EXPECT_EQ(f.predict(x), 2.5);
}

TEST(RegressionForest, BeatsTheMeanOnALinearTarget) {
  const auto X = uniform_matrix(100, 1, 2);
  std::vector<double> y(100);
  for (std::size_t i = 0; i < 100; ++i) y[i] = X(i, 0);
  const auto pred = oob_predict(RegressionForest::fit(X, y, small_params(200)), X);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 100;
  double mse = 0, var = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    mse += (pred[i] - y[i]) * (pred[i] - y[i]);
    var += (y[i] - mean) * (y[i] - mean);
  }
  EXPECT_LT(mse, var);
}

TEST(RegressionForest, PropensityTracksTheFirstCovariate) {
  const Dataset d = gen_experiment1(2000, 3).data;
  std::vector<double> w(d.treatment().begin(), d.treatment().end());
  const auto pi = oob_predict(RegressionForest::fit(d.features(), w, small_params(200)), d.features());
  std::vector<double> truth(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) truth[i] = d.features()(i, 0) > 0 ? 1.0 : 0.0;
  EXPECT_GT(pearson(ranks(pi), ranks(truth)), 0.3);
}

TEST(RegressionForest, FullSubsampleLeavesNoOutOfBagTrees) {
  const auto X = uniform_matrix(40, 2, 4);
  std::vector<double> y(40);
  for (std::size_t i = 0; i < 40; ++i) y[i] = X(i, 1);
  auto params = small_params(1);
  params.subsample_fraction = 1.0;
  const auto f = RegressionForest::fit(X, y, params);
  try {
    oob_predict(f, X);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoOobTrees);
  }
}

TEST(RegressionForest, RejectsBadInput) {
  const auto X = uniform_matrix(10, 2, 5);
  std::vector<double> y(10, 0.0);
  y[3] = 1.0;
  auto params = small_params(5);
  params.min_node_size = 6;
  params.max_leaf_size = 20;
  EXPECT_THROW(RegressionForest::fit(X, y, params), Error);
  EXPECT_THROW(RegressionForest::fit(X, std::vector<double>(9, 0.0), small_params(5)), Error);
  y[0] = NAN;
  EXPECT_THROW(RegressionForest::fit(X, y, small_params(5)), Error);
}

void check_tree(const Tree& t, const ForestParams& params, std::size_t n, std::size_t p) {
  const std::size_t s = std::clamp<std::size_t>(static_cast<std::size_t>(params.subsample_fraction * n), 2, n);
  ASSERT_EQ(t.split_half.size() + t.estimation_half.size(), s);
  std::vector<std::uint32_t> both;
  std::set_intersection(t.split_half.begin(), t.split_half.end(), t.estimation_half.begin(), t.estimation_half.end(),
                        std::back_inserter(both));
  EXPECT_TRUE(both.empty());
  std::size_t in = 0;
  for (std::size_t i = 0; i < n; ++i) in += t.in_subsample(i);
  EXPECT_EQ(in, s);
  for (auto r : t.split_half) EXPECT_TRUE(t.in_subsample(r));
  for (auto r : t.estimation_half) EXPECT_TRUE(t.in_subsample(r));

  std::size_t uncapped = 0, covered = 0;
  for (const auto& node : t.nodes) {
    if (node.is_leaf()) {
      covered += node.leaf_end - node.leaf_begin;
      EXPECT_EQ(node.leaf_end - node.leaf_begin, node.estimation_count);
      if (node.estimation_count > params.max_leaf_size) ++uncapped;
      continue;
    }
    EXPECT_LT(node.split_var, p);
    for (auto c : {node.left, node.right}) {
      const auto& child = t.nodes[static_cast<std::size_t>(c)];
      if (node.randomized) {
        EXPECT_GE(child.estimation_count, params.min_node_size);
      } else {
        const double gamma = params.min_child_fraction;
        EXPECT_GE(child.split_count, std::max<double>(params.min_node_size, std::ceil(gamma * node.split_count)));
        EXPECT_GE(child.estimation_count,
                  std::max<double>(params.min_node_size, std::ceil(gamma * node.estimation_count)));
      }
    }
  }
  EXPECT_EQ(covered, t.estimation_half.size());
  EXPECT_EQ(uncapped, t.uncapped_leaves);
}

TEST(RegressionForest, TreesAreHonestBalancedAndCapped) {
  const auto X = uniform_matrix(600, 4, 6);
  Rng rng(7);
  std::vector<double> y(600);
  for (std::size_t i = 0; i < 600; ++i) y[i] = X(i, 0) + X(i, 2) * X(i, 3) + 0.1 * rng.normal();
  const auto params = small_params(50);
  const auto f = RegressionForest::fit(X, y, params);
  for (const auto& t : f.trees()) check_tree(t, params, 600, 4);
}

TEST(RegressionForest, WithoutHonestyBothHalvesAreTheSubsample) {
  const auto X = uniform_matrix(300, 3, 12);
  std::vector<double> y(300);
  for (std::size_t i = 0; i < 300; ++i) y[i] = X(i, 0) * X(i, 1);
  auto params = small_params(20);
  params.honesty = false;
  params.subsample_fraction = 0.8;
  const auto f = RegressionForest::fit(X, y, params);
  for (const auto& t : f.trees()) {
    ASSERT_EQ(t.split_half.size(), 240u);
    EXPECT_EQ(t.split_half, t.estimation_half);
    for (auto r : t.split_half) EXPECT_TRUE(t.in_subsample(r));
    std::size_t covered = 0;
    for (const auto& node : t.nodes) {
      if (node.is_leaf()) {
        covered += node.estimation_count;
        continue;
      }
      for (auto c : {node.left, node.right}) {
        const auto& child = t.nodes[static_cast<std::size_t>(c)];
        if (!node.randomized) EXPECT_EQ(child.split_count, child.estimation_count);
        EXPECT_GE(child.estimation_count, params.min_node_size);
      }
    }
    EXPECT_EQ(covered, 240u);
  }
  const auto oob = f.oob_predictions(X);
  for (std::size_t i = 0; i < 300; ++i) {
    bool seen_everywhere = true;
    for (const auto& t : f.trees()) seen_everywhere = seen_everywhere && t.in_subsample(i);
    EXPECT_EQ(oob[i].has_value(), !seen_everywhere);
  }
}

TEST(RegressionForest, RespectsTheFeatureSet) {
  const auto X = uniform_matrix(300, 4, 8);
  std::vector<double> y(300);
  for (std::size_t i = 0; i < 300; ++i) y[i] = X(i, 0) + X(i, 1);
  const auto f = RegressionForest::fit(X, y, small_params(30), FeatureSet{1, 3});
  for (const auto& t : f.trees()) {
    for (const auto& node : t.nodes) {
      if (!node.is_leaf() && !node.randomized) EXPECT_TRUE(node.split_var == 1 || node.split_var == 3);
    }
  }
}

TEST(RegressionForest, OutOfBagSkipsTreesThatSawTheRow) {
  const auto X = uniform_matrix(60, 2, 9);
  std::vector<double> y(60);
  for (std::size_t i = 0; i < 60; ++i) y[i] = static_cast<double>(i);
  auto params = small_params(40);
  params.min_node_size = 1;
  params.max_leaf_size = 1;
  const auto f = RegressionForest::fit(X, y, params);
  const auto oob = f.oob_predictions(X);
  for (std::size_t i = 0; i < 60; ++i) {
    double sum = 0;
    std::size_t count = 0;
    for (const auto& t : f.trees()) {
      if (t.in_subsample(i)) continue;
      const auto members = t.leaf_members(t.find_leaf(X, i));
      double leaf = 0;
      for (auto r : members) leaf += y[r];
      sum += leaf / static_cast<double>(members.size());
      ++count;
    }
    ASSERT_EQ(oob[i].has_value(), count > 0);
    if (count > 0) EXPECT_NEAR(*oob[i], sum / static_cast<double>(count), 1e-12);
  }
}

TEST(RegressionForest, ThreadCountNeverChangesResults) {
  const Dataset d = gen_experiment1(400, 10).data;
  auto params = small_params(60);
  std::vector<std::vector<double>> runs;
  for (std::size_t threads : {1, 2, 8}) {
    params.num_threads = threads;
    runs.push_back(oob_predict(RegressionForest::fit(d.features(), d.outcome(), params), d.features()));
  }
  EXPECT_EQ(runs[0], runs[1]);
  EXPECT_EQ(runs[0], runs[2]);
}

TEST(Centering, ResidualsReconstructTheData) {
  const Dataset d = gen_experiment1(500, 11).data;
  const auto c = center(d, small_params(100));
  ASSERT_EQ(c.centered_outcome.size(), d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    EXPECT_EQ(d.outcome()[i] - c.m_hat[i], c.centered_outcome[i]);
    if (std::abs(c.m_hat[i]) <= std::abs(d.outcome()[i])) EXPECT_EQ(c.centered_outcome[i] + c.m_hat[i], d.outcome()[i]);
    EXPECT_EQ(c.centered_treatment[i] + c.pi_hat[i], static_cast<double>(d.treatment()[i]));
    EXPECT_GE(c.pi_hat[i], kPropensityClamp);
    EXPECT_LE(c.pi_hat[i], 1.0 - kPropensityClamp);
  }
  double my = 0, mw = 0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    my += c.centered_outcome[i];
    mw += c.centered_treatment[i];
  }
  EXPECT_LT(std::abs(my / d.n()), 0.1);
  EXPECT_LT(std::abs(mw / d.n()), 0.05);
}

TEST(Centering, DerivedSettings) {
  ForestParams causal;
  causal.num_trees = 2000;
  const auto c = centering_forest_params(causal, CenteringParams{}, 8);
  EXPECT_EQ(c.num_trees, 500u);
  EXPECT_EQ(c.mtry_for(8), 8u);
  EXPECT_EQ(c.min_node_size, 1u);
  EXPECT_FALSE(c.honesty);
  EXPECT_TRUE(causal.honesty);
  EXPECT_NO_THROW(c.validate(8));
  causal.num_trees = 100;
  EXPECT_EQ(centering_forest_params(causal, CenteringParams{}, 8).num_trees, 50u);
  CenteringParams fixed;
  fixed.num_trees = 7;
  fixed.mtry = 3;
  const auto f = centering_forest_params(causal, fixed, 8);
  EXPECT_EQ(f.num_trees, 7u);
  EXPECT_EQ(f.mtry_for(8), 3u);
}

}  // namespace
}  // namespace cfvi
