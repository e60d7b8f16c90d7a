#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/forest_params.hpp"
#include "cfvi/rng.hpp"
#include "cfvi/tree.hpp"

namespace cfvi {

/// Honest subsampled regression forest, used for local centering.
class RegressionForest {
 public:
  static RegressionForest fit(const FeatureMatrix& X, std::span<const double> target, const ForestParams& params,
                              const FeatureSet& features) {
    params.validate(X.cols());
    features.check(X.cols());
    if (target.size() != X.rows()) throw Error(ErrorKind::DimensionMismatch, "target length differs from n");
    if (X.rows() < 2 * params.min_node_size) {
      throw Error(ErrorKind::TooFewRows, "need n >= 2 * min_node_size rows, got " + std::to_string(X.rows()));
    }
    for (double v : target) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "non-finite regression target");
    }

    RegressionForest forest;
    forest.params_ = params;
    forest.n_ = X.rows();
    const auto [lo, hi] = std::minmax_element(target.begin(), target.end());
    if (*lo == *hi) forest.constant_ = *lo;
    forest.trees_ = grow_forest(X, features, params, RegressionCriterion{target});
    forest.leaf_means_ = make_leaf_table<1>(forest.trees_, [&](std::uint32_t r) {
      return std::array<double, 1>{target[r]};
    });
    return forest;
  }

  static RegressionForest fit(const FeatureMatrix& X, std::span<const double> target, const ForestParams& params) {
    return fit(X, target, params, FeatureSet::all(X.cols()));
  }

  /// Set when the training target was constant; predictions then return it
  /// exactly.
  std::optional<double> degenerate_target() const noexcept { return constant_; }

  const std::vector<Tree>& trees() const noexcept { return trees_; }
  const ForestParams& params() const noexcept { return params_; }

  double predict(std::span<const double> x) const {
    const auto m = accumulate(trees_, leaf_means_, x);
    return constant_ ? *constant_ : m.mean(0);
  }

  /// Out-of-bag prediction per training row; nullopt where every tree saw
  /// the row.
  std::vector<std::optional<double>> oob_predictions(const FeatureMatrix& X) const {
    const auto moments = accumulate_oob(trees_, leaf_means_, X, params_.num_threads);
    std::vector<std::optional<double>> out(moments.size());
    for (std::size_t i = 0; i < moments.size(); ++i) {
      if (moments[i].trees > 0) out[i] = constant_ ? *constant_ : moments[i].mean(0);
    }
    return out;
  }

 private:
  ForestParams params_;
  std::size_t n_ = 0;
  std::optional<double> constant_;
  std::vector<Tree> trees_;
  LeafTable<1> leaf_means_;
};

inline RegressionForest fit_regression_forest(const FeatureMatrix& X, std::span<const double> target,
                                              const ForestParams& params) {
  return RegressionForest::fit(X, target, params);
}

/// Out-of-bag predictions on the training matrix. Throws NoOobTrees for the
/// first row that no tree left out.
inline std::vector<double> oob_predict(const RegressionForest& forest, const FeatureMatrix& X) {
  const auto raw = forest.oob_predictions(X);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw[i]) {
      throw Error(ErrorKind::NoOobTrees, "row " + std::to_string(i) + " is in every tree's subsample", i);
    }
    out[i] = *raw[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local centering

inline constexpr double kPropensityClamp = 0.01;

namespace detail {

/// Returns (residual, fitted') with residual == observed - fitted' after
/// rounding. fitted' is nudged within a few ulps of `fitted` so that
/// residual + fitted' == observed as well; that is always possible when
/// |fitted| <= |observed| and not always otherwise.
inline std::pair<double, double> exact_residual(double observed, double fitted) {
  const double residual = observed - fitted;
  auto fits = [&](double m) { return residual + m == observed && observed - m == residual; };
  const double stored = observed - residual;
  if (fits(stored)) return {residual, stored};
  double up = stored, down = stored;
  for (int step = 0; step < 8; ++step) {
    up = std::nextafter(up, HUGE_VAL);
    if (fits(up)) return {residual, up};
    down = std::nextafter(down, -HUGE_VAL);
    if (fits(down)) return {residual, down};
  }
  return {residual, fitted};
}

}  // namespace detail

/// Settings in which the two centering forests differ from the causal
/// forest. Zero means "derive": num_trees becomes max(50, M / 4) for a causal
/// forest of M trees and mtry becomes p.
struct CenteringParams {
  std::size_t num_trees = 0;
  std::size_t min_node_size = 1;
  std::size_t max_leaf_size = 5;
  std::size_t mtry = 0;
  double subsample_fraction = 0.8;
  bool honesty = false;
};

inline ForestParams centering_forest_params(const ForestParams& causal, const CenteringParams& c, std::size_t p) {
  ForestParams out = causal;
  out.num_trees = c.num_trees > 0 ? c.num_trees : std::max<std::size_t>(50, causal.num_trees / 4);
  out.min_node_size = c.min_node_size;
  out.max_leaf_size = c.max_leaf_size;
  out.mtry = c.mtry > 0 ? c.mtry : p;
  out.subsample_fraction = c.subsample_fraction;
  out.honesty = c.honesty;
  return out;
}

/// Fits outcome and propensity regression forests on all p columns and
/// subtracts their out-of-bag predictions. The two forests use streams
/// derived from params.seed.
inline CenteredDataset center(const Dataset& d, const ForestParams& params) {
  const FeatureMatrix& X = d.features();
  std::vector<double> w(d.treatment().begin(), d.treatment().end());

  ForestParams outcome_params = params;
  outcome_params.seed = derive_seed(params.seed, 0x0cULL);
  ForestParams treatment_params = params;
  treatment_params.seed = derive_seed(params.seed, 0x0dULL);

  const auto m_forest = RegressionForest::fit(X, d.outcome(), outcome_params);
  const auto m_hat = oob_predict(m_forest, X);
  const auto pi_forest = RegressionForest::fit(X, w, treatment_params);
  auto pi_hat = oob_predict(pi_forest, X);

  CenteredDataset c;
  c.features = X;
  c.feature_names = d.feature_names();
  c.centered_outcome.resize(d.n());
  c.centered_treatment.resize(d.n());
  c.m_hat.resize(d.n());
  c.pi_hat.resize(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    std::tie(c.centered_outcome[i], c.m_hat[i]) = detail::exact_residual(d.outcome()[i], m_hat[i]);
    const double pi = std::clamp(pi_hat[i], kPropensityClamp, 1.0 - kPropensityClamp);
    std::tie(c.centered_treatment[i], c.pi_hat[i]) = detail::exact_residual(w[i], pi);
  }
  return c;
}

}  // namespace cfvi
