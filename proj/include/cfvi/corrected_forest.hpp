#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "cfvi/causal_forest.hpp"
#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/forest_params.hpp"
#include "cfvi/tree.hpp"

namespace cfvi {

struct ThetaPrediction {
  double theta = 0.0;        // corrected estimate, truncated
  double tau_reduced = 0.0;  // plain retrained-forest estimate
  double correction = 0.0;
  bool degenerate = false;         // reduced slope fell back to the global slope
  bool correction_zeroed = false;  // correction denominator below threshold
};

struct OobTheta {
  std::vector<double> theta;
  std::vector<double> tau_reduced;
  std::vector<std::uint8_t> covered;
  std::size_t degenerate = 0;
  std::size_t correction_zeroed = 0;
};

/// Causal forest retrained without a drop set, plus the covariance
/// correction that removes the bias left when a dropped confounder also
/// drives effect heterogeneity:
///
///   theta(x) = tau_reduced(x) - Cov_a(W~^2, tau_hat) / Var_a(W~)
///
/// where a = alpha'(x) are the reduced forest's weights and tau_hat the full
/// forest's out-of-bag estimates at the training rows.
class CorrectedForest {
 public:
  /// `base_tau` holds the full forest's estimate at every training row.
  /// The reduced forest grows from seed derive_seed(params.seed, drop.hash()).
  static CorrectedForest fit(std::shared_ptr<const CenteredDataset> data, const FeatureSet& drop,
                             std::vector<double> base_tau, const ForestParams& params) {
    const CenteredDataset& c = *data;
    if (base_tau.size() != c.n()) throw Error(ErrorKind::DimensionMismatch, "base_tau length differs from n");
    for (double v : base_tau) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "non-finite base estimate");
    }
    if (!drop.empty() && drop.indices().back() >= c.p()) {
      throw Error(ErrorKind::InvalidArgument, "drop index out of range");
    }
    const FeatureSet kept = FeatureSet::all(c.p()).without(drop);
    if (kept.empty()) throw Error(ErrorKind::EmptyFeatureSet, "dropping every feature leaves nothing to split on");

    ForestParams reduced_params = params;
    reduced_params.seed = derive_seed(params.seed, drop.hash());

    CorrectedForest cf{CausalForest::fit(data, kept, reduced_params)};
    cf.drop_ = drop;
    for (double& v : base_tau) v = cf.reduced_.truncate(v);
    cf.base_tau_ = std::move(base_tau);

    const auto& w = c.centered_treatment;
    const auto& y = c.centered_outcome;
    const auto& tau = cf.base_tau_;
    cf.moments_ = make_leaf_table<6>(cf.reduced_.trees(), [&](std::uint32_t r) {
      const double ww = w[r] * w[r];
      return std::array<double, 6>{w[r], y[r], w[r] * y[r], ww, ww * tau[r], tau[r]};
    });
    return cf;
  }

  const CausalForest& reduced_forest() const noexcept { return reduced_; }
  const std::vector<double>& base_tau() const noexcept { return base_tau_; }
  const FeatureSet& drop_set() const noexcept { return drop_; }

  ThetaPrediction predict(std::span<const double> x) const {
    if (x.size() != reduced_.training().p()) {
      throw Error(ErrorKind::DimensionMismatch, "query must carry every column");
    }
    return from_moments(accumulate(reduced_.trees(), moments_, x));
  }

  OobTheta oob() const {
    const auto moments = accumulate_oob(reduced_.trees(), moments_, reduced_.training().features,
                                        reduced_.params().num_threads);
    OobTheta out;
    out.theta.assign(moments.size(), 0.0);
    out.tau_reduced.assign(moments.size(), 0.0);
    out.covered.assign(moments.size(), 0);
    for (std::size_t i = 0; i < moments.size(); ++i) {
      if (moments[i].trees == 0) continue;
      const auto p = from_moments(moments[i]);
      out.theta[i] = p.theta;
      out.tau_reduced[i] = p.tau_reduced;
      out.covered[i] = 1;
      out.degenerate += p.degenerate;
      out.correction_zeroed += p.correction_zeroed;
    }
    return out;
  }

 private:
  explicit CorrectedForest(CausalForest reduced) : reduced_(std::move(reduced)) {}

  ThetaPrediction from_moments(const WeightedMoments<6>& m) const {
    // slots: w, y, wy, ww, ww*tau, tau
    ThetaPrediction p;
    double denominator = 0.0;
    const double tau = detail::slope(m.mean(3), m.mean(0), m.mean(2), m.mean(1), denominator);
    if (denominator >= kMinDenominator) {
      p.tau_reduced = reduced_.truncate(tau);
      p.correction = (m.mean(4) - m.mean(3) * m.mean(5)) / denominator;
    } else {
      p.tau_reduced = reduced_.global_tau();
      p.degenerate = true;
      p.correction_zeroed = true;
    }
    p.theta = reduced_.truncate(p.tau_reduced - p.correction);
    return p;
  }

  CausalForest reduced_;
  FeatureSet drop_;
  std::vector<double> base_tau_;
  LeafTable<6> moments_;
};

/// Full-forest estimates at the training rows: out-of-bag where available,
/// the all-trees prediction otherwise. Returns the number of rows that fell
/// back.
inline std::size_t base_estimates(const CausalForest& base, const OobTau& oob, std::vector<double>& out) {
  std::size_t fallbacks = 0;
  out = oob.value;
  const auto& X = base.training().features;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (oob.covered[i]) continue;
    out[i] = base.predict(X.row(i)).value;
    ++fallbacks;
  }
  return fallbacks;
}

inline CorrectedForest fit_corrected_forest(const FeatureSet& drop, const CausalForest& base) {
  std::vector<double> tau;
  base_estimates(base, base.oob(), tau);
  return CorrectedForest::fit(base.training_ptr(), drop, std::move(tau), base.params());
}

inline double predict_theta(const CorrectedForest& cf, std::span<const double> x) { return cf.predict(x).theta; }

}  // namespace cfvi
