#pragma once

#include <algorithm>
#include <memory>
#include <span>
#include <vector>

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/forest_params.hpp"
#include "cfvi/tree.hpp"

namespace cfvi {

inline constexpr double kMinDenominator = 1e-12;

struct TauPrediction {
  double value = 0.0;
  // No treatment variation under the weights; value is the global slope.
  bool degenerate = false;
};

/// Sparse alpha_i(x) over training rows, sorted by row.
struct ForestWeights {
  std::vector<std::pair<std::uint32_t, double>> entries;

  double sum() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.second;
    return s;
  }
  double at(std::size_t row) const {
    const auto it = std::lower_bound(entries.begin(), entries.end(), row,
                                     [](const auto& e, std::size_t r) { return e.first < r; });
    return it != entries.end() && it->first == row ? it->second : 0.0;
  }
};

struct OobTau {
  std::vector<double> value;
  std::vector<std::uint8_t> covered;
  std::vector<std::uint8_t> degenerate;

  std::size_t uncovered_count() const {
    return static_cast<std::size_t>(std::count(covered.begin(), covered.end(), 0));
  }
  std::size_t degenerate_count() const {
    return static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
  }
};

namespace detail {

// Slots of the causal leaf table.
enum CausalMoment : std::size_t { kW = 0, kY = 1, kWY = 2, kWW = 3 };

inline double slope(double w_sq_mean, double w_mean, double wy_mean, double y_mean, double& denominator) {
  denominator = w_sq_mean - w_mean * w_mean;
  return (wy_mean - w_mean * y_mean) / denominator;
}

}  // namespace detail

/// Honest causal forest on centered data. Predictions solve the forest-
/// weighted local moment equation: the weighted least-squares slope of Y~
/// on W~.
class CausalForest {
 public:
  static CausalForest fit(std::shared_ptr<const CenteredDataset> data, FeatureSet features,
                          const ForestParams& params) {
    const CenteredDataset& c = *data;
    params.validate(c.p());
    features.check(c.p());
    if (c.n() < 2 * params.min_node_size) {
      throw Error(ErrorKind::TooFewRows, "need n >= 2 * min_node_size rows, got " + std::to_string(c.n()));
    }

    CausalForest forest;
    forest.params_ = params;
    forest.features_ = std::move(features);
    forest.data_ = std::move(data);
    forest.global_tau_ = forest.compute_global_tau();

    const auto& w = c.centered_treatment;
    const auto& y = c.centered_outcome;
    forest.trees_ = grow_forest(c.features, forest.features_, params, CausalCriterion{w, y});
    forest.moments_ = make_leaf_table<4>(forest.trees_, [&](std::uint32_t r) {
      return std::array<double, 4>{w[r], y[r], w[r] * y[r], w[r] * w[r]};
    });
    return forest;
  }

  const std::vector<Tree>& trees() const noexcept { return trees_; }
  const FeatureSet& feature_set() const noexcept { return features_; }
  const ForestParams& params() const noexcept { return params_; }
  const CenteredDataset& training() const noexcept { return *data_; }
  std::shared_ptr<const CenteredDataset> training_ptr() const noexcept { return data_; }

  /// Slope of Y~ on W~ over the whole training sample; the fallback for
  /// queries without treatment variation.
  double global_tau() const noexcept { return global_tau_; }

  ForestWeights weights(std::span<const double> x) const {
    check_query(x);
    return {kernel_weights(trees_, data_->n(), x)};
  }

  TauPrediction predict(std::span<const double> x) const {
    check_query(x);
    return from_moments(accumulate(trees_, moments_, x));
  }

  OobTau oob() const {
    const auto moments = accumulate_oob(trees_, moments_, data_->features, params_.num_threads);
    OobTau out;
    out.value.assign(moments.size(), 0.0);
    out.covered.assign(moments.size(), 0);
    out.degenerate.assign(moments.size(), 0);
    for (std::size_t i = 0; i < moments.size(); ++i) {
      if (moments[i].trees == 0) continue;
      const auto tau = from_moments(moments[i]);
      out.value[i] = tau.value;
      out.covered[i] = 1;
      out.degenerate[i] = tau.degenerate;
    }
    return out;
  }

  double truncate(double v) const {
    return std::clamp(v, -params_.truncation_bound, params_.truncation_bound);
  }

 private:
  CausalForest() = default;

  void check_query(std::span<const double> x) const {
    if (x.size() != data_->p()) {
      throw Error(ErrorKind::DimensionMismatch, "query must carry all " + std::to_string(data_->p()) + " columns");
    }
  }

  double compute_global_tau() const {
    const auto& w = data_->centered_treatment;
    const auto& y = data_->centered_outcome;
    const auto n = static_cast<double>(w.size());
    double w_mean = 0.0, y_mean = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w_mean += w[i];
      y_mean += y[i];
    }
    w_mean /= n;
    y_mean /= n;
    double var = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      var += (w[i] - w_mean) * (w[i] - w_mean);
      cov += (w[i] - w_mean) * (y[i] - y_mean);
    }
    if (var / n < CausalCriterion::kMinVariance) {
      throw Error(ErrorKind::ZeroTreatmentVariance, "centered treatment is constant");
    }
    return truncate(cov / var);
  }

  TauPrediction from_moments(const WeightedMoments<4>& m) const {
    using namespace detail;
    double denominator = 0.0;
    const double tau = slope(m.mean(kWW), m.mean(kW), m.mean(kWY), m.mean(kY), denominator);
    if (!(denominator >= kMinDenominator)) return {global_tau_, true};
    return {truncate(tau), false};
  }

  ForestParams params_;
  FeatureSet features_;
  std::shared_ptr<const CenteredDataset> data_;
  double global_tau_ = 0.0;
  std::vector<Tree> trees_;
  LeafTable<4> moments_;
};

inline CausalForest fit_causal_forest(const CenteredDataset& c, const FeatureSet& features,
                                      const ForestParams& params) {
  return CausalForest::fit(std::make_shared<const CenteredDataset>(c), features, params);
}

inline ForestWeights forest_weights(const CausalForest& f, std::span<const double> x) { return f.weights(x); }

inline double predict_tau(const CausalForest& f, std::span<const double> x) { return f.predict(x).value; }

/// Out-of-bag tau for every training row. Throws NoOobTrees for the first
/// row that no tree left out.
inline std::vector<double> oob_predict_tau(const CausalForest& f) {
  auto oob = f.oob();
  for (std::size_t i = 0; i < oob.covered.size(); ++i) {
    if (!oob.covered[i]) {
      throw Error(ErrorKind::NoOobTrees, "row " + std::to_string(i) + " is in every tree's subsample", i);
    }
  }
  return std::move(oob.value);
}

}  // namespace cfvi
