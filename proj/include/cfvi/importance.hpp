#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "cfvi/causal_forest.hpp"
#include "cfvi/corrected_forest.hpp"
#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/forest_params.hpp"
#include "cfvi/regression_forest.hpp"
#include "cfvi/rng.hpp"

namespace cfvi {

enum class Variant { corrected, uncorrected, both };

constexpr std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::corrected: return "corrected";
    case Variant::uncorrected: return "uncorrected";
    case Variant::both: return "both";
  }
  return "unknown";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "corrected") return Variant::corrected;
  if (s == "uncorrected") return Variant::uncorrected;
  if (s == "both") return Variant::both;
  throw Error(ErrorKind::InvalidArgument, "variant must be corrected, uncorrected or both");
}

/// Columns dropped together, with a display label.
struct Group {
  std::string label;
  FeatureSet columns;
};

inline std::vector<Group> singleton_groups(const Dataset& d) {
  std::vector<Group> groups;
  for (std::size_t j = 0; j < d.p(); ++j) groups.push_back({d.feature_names()[j], FeatureSet{j}});
  return groups;
}

struct ImportanceOptions {
  std::size_t repetitions = 10;
  CenteringParams centering;
  // Grow the full forest on one half of the rows and the retrained forests on
  // the other, instead of relying on out-of-bag estimates.
  bool sample_split = false;
};

struct Diagnostics {
  std::size_t degenerate_predictions = 0;  // slope fell back to the global slope
  std::size_t zeroed_corrections = 0;
  std::size_t excluded_rows = 0;   // evaluation rows lacking out-of-bag coverage
  std::size_t base_fallbacks = 0;  // full-forest estimate taken in-bag

  Diagnostics& operator+=(const Diagnostics& o) {
    degenerate_predictions += o.degenerate_predictions;
    zeroed_corrections += o.zeroed_corrections;
    excluded_rows += o.excluded_rows;
    base_fallbacks += o.base_fallbacks;
    return *this;
  }
  friend bool operator==(const Diagnostics&, const Diagnostics&) = default;
};

/// One pass of the algorithm: per-group importances for both variants.
struct RepetitionResult {
  double baseline_corrected = 0.0;
  double baseline_uncorrected = 0.0;
  std::vector<double> corrected;
  std::vector<double> uncorrected;
  Diagnostics diagnostics;
};

struct TargetImportance {
  std::string label;
  FeatureSet columns;
  double value = 0.0;
  std::optional<double> std_dev;  // of the mean; absent with one repetition
  std::vector<double> per_repetition;
};

struct ImportanceReport {
  Variant variant = Variant::corrected;
  std::vector<TargetImportance> targets;
  double baseline = 0.0;
  std::optional<double> baseline_std_dev;
  std::vector<double> baseline_per_repetition;
  std::size_t repetitions = 0;
  Diagnostics diagnostics;
};

struct ImportanceResult {
  ImportanceReport corrected;
  ImportanceReport uncorrected;

  const ImportanceReport& get(Variant v) const { return v == Variant::uncorrected ? uncorrected : corrected; }
};

namespace detail {

inline std::shared_ptr<const CenteredDataset> subset(const CenteredDataset& c, const std::vector<std::size_t>& rows) {
  auto out = std::make_shared<CenteredDataset>();
  out->features = FeatureMatrix(rows.size(), c.p());
  out->feature_names = c.feature_names;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    for (std::size_t j = 0; j < c.p(); ++j) out->features(k, j) = c.features(i, j);
    out->centered_outcome.push_back(c.centered_outcome[i]);
    out->centered_treatment.push_back(c.centered_treatment[i]);
    out->m_hat.push_back(c.m_hat[i]);
    out->pi_hat.push_back(c.pi_hat[i]);
  }
  return out;
}

/// Full-forest estimates at the evaluation rows, and the state the retrained
/// forests need.
struct Stage {
  std::shared_ptr<const CenteredDataset> retrain_data;  // rows the retrained forests see
  std::vector<double> base_tau;                         // full-forest estimate per retrain row
  std::vector<std::uint8_t> base_covered;
  ForestParams params;
  Diagnostics diagnostics;
};

inline Stage prepare_stage(const Dataset& d, const ForestParams& params, const ImportanceOptions& options) {
  ForestParams centering = centering_forest_params(params, options.centering, d.p());
  centering.seed = derive_seed(params.seed, 1);
  auto centered = std::make_shared<const CenteredDataset>(center(d, centering));

  Stage stage;
  stage.params = params;
  stage.params.seed = derive_seed(params.seed, 2);

  if (!options.sample_split) {
    const auto base = CausalForest::fit(centered, FeatureSet::all(d.p()), stage.params);
    const auto oob = base.oob();
    stage.diagnostics.base_fallbacks = base_estimates(base, oob, stage.base_tau);
    stage.diagnostics.degenerate_predictions += oob.degenerate_count();
    stage.base_covered = oob.covered;
    stage.retrain_data = std::move(centered);
    return stage;
  }

  // Shuffle rows into two halves: the full forest learns on the first, the
  // retrained forests on the second, where the full forest's predictions are
  // independent of the data.
  Rng rng(derive_seed(params.seed, 3));
  std::vector<std::size_t> order(d.n());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
  const std::size_t half = d.n() / 2;
  std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  const auto base = CausalForest::fit(subset(*centered, first), FeatureSet::all(d.p()), stage.params);
  stage.retrain_data = subset(*centered, second);
  stage.base_tau.resize(second.size());
  for (std::size_t k = 0; k < second.size(); ++k) {
    const auto tau = base.predict(stage.retrain_data->features.row(k));
    stage.base_tau[k] = tau.value;
    stage.diagnostics.degenerate_predictions += tau.degenerate;
  }
  stage.base_covered.assign(second.size(), 1);
  return stage;
}

struct Ratios {
  double corrected = 0.0;
  double uncorrected = 0.0;
};

}  // namespace detail

/// Runs centering, the full forest, the full-feature retrain with fresh
/// randomization (baseline) and one retrain per group, all from streams
/// derived from params.seed. For each group and variant:
///
///   I = sum (tau - theta)^2 / sum (tau - mean tau)^2 - I0
///
/// over rows with out-of-bag estimates from every forest involved; I0 is the
/// same ratio against the baseline retrain.
inline RepetitionResult run_repetition(const Dataset& d, const std::vector<Group>& groups,
                                       const ForestParams& params, const ImportanceOptions& options = {}) {
  if (groups.empty()) throw Error(ErrorKind::InvalidArgument, "no importance targets");
  for (const auto& g : groups) g.columns.check(d.p());
  params.validate(d.p());

  auto stage = detail::prepare_stage(d, params, options);
  const std::size_t n = stage.base_tau.size();
  const auto& tau = stage.base_tau;

  RepetitionResult result;
  result.diagnostics = stage.diagnostics;

  const auto baseline = CorrectedForest::fit(stage.retrain_data, FeatureSet{}, tau, stage.params);
  const auto baseline_oob = baseline.oob();
  result.diagnostics.degenerate_predictions += baseline_oob.degenerate;
  result.diagnostics.zeroed_corrections += baseline_oob.correction_zeroed;

  // Denominator and baseline over rows covered by the full and baseline forests.
  auto ratios = [&](const OobTheta& retrained, const std::vector<std::uint8_t>& rows_mask,
                    std::size_t& excluded) {
    double mean = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rows_mask[i] && retrained.covered[i]) {
        mean += tau[i];
        ++count;
      }
    }
    excluded = n - count;
    if (count == 0) throw Error(ErrorKind::NoOobTrees, "no row has out-of-bag estimates from every forest");
    mean /= static_cast<double>(count);
    double spread = 0.0, gap_c = 0.0, gap_u = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(rows_mask[i] && retrained.covered[i])) continue;
      spread += (tau[i] - mean) * (tau[i] - mean);
      gap_c += (tau[i] - retrained.theta[i]) * (tau[i] - retrained.theta[i]);
      gap_u += (tau[i] - retrained.tau_reduced[i]) * (tau[i] - retrained.tau_reduced[i]);
    }
    if (!(spread / static_cast<double>(count) > 1e-12)) {
      throw Error(ErrorKind::HomogeneousEffect, "estimated treatment effects do not vary");
    }
    return detail::Ratios{gap_c / spread, gap_u / spread};
  };

  std::size_t excluded = 0;
  const auto base0 = ratios(baseline_oob, stage.base_covered, excluded);
  result.baseline_corrected = base0.corrected;
  result.baseline_uncorrected = base0.uncorrected;

  std::vector<std::uint8_t> eval_mask(n);
  for (std::size_t i = 0; i < n; ++i) eval_mask[i] = stage.base_covered[i] && baseline_oob.covered[i];

  for (const auto& group : groups) {
    const auto retrained = CorrectedForest::fit(stage.retrain_data, group.columns, tau, stage.params);
    const auto oob = retrained.oob();
    result.diagnostics.degenerate_predictions += oob.degenerate;
    result.diagnostics.zeroed_corrections += oob.correction_zeroed;

    std::size_t group_excluded = 0;
    const auto r = ratios(oob, eval_mask, group_excluded);
    result.diagnostics.excluded_rows += group_excluded;

    // I0 restricted to this group's evaluation rows.
    std::vector<std::uint8_t> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = eval_mask[i] && oob.covered[i];
    std::size_t unused = 0;
    const auto b = ratios(baseline_oob, mask, unused);
    result.corrected.push_back(r.corrected - b.corrected);
    result.uncorrected.push_back(r.uncorrected - b.uncorrected);
  }
  return result;
}

/// Importance of one drop set from a single pass seeded by params.seed.
inline double importance_one(const Dataset& d, const FeatureSet& drop, const ForestParams& params,
                             Variant variant = Variant::corrected, const ImportanceOptions& options = {}) {
  const auto r = run_repetition(d, {{"target", drop}}, params, options);
  return variant == Variant::uncorrected ? r.uncorrected.front() : r.corrected.front();
}

namespace detail {

inline std::pair<double, std::optional<double>> mean_and_sem(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, std::nullopt};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return {mean, sd / std::sqrt(static_cast<double>(v.size()))};
}

inline ImportanceReport aggregate(Variant variant, const std::vector<Group>& groups,
                                  const std::vector<RepetitionResult>& reps) {
  ImportanceReport report;
  report.variant = variant;
  report.repetitions = reps.size();
  const bool corrected = variant == Variant::corrected;
  for (const auto& r : reps) {
    report.baseline_per_repetition.push_back(corrected ? r.baseline_corrected : r.baseline_uncorrected);
    report.diagnostics += r.diagnostics;
  }
  std::tie(report.baseline, report.baseline_std_dev) = mean_and_sem(report.baseline_per_repetition);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    TargetImportance t;
    t.label = groups[g].label;
    t.columns = groups[g].columns;
    for (const auto& r : reps) t.per_repetition.push_back(corrected ? r.corrected[g] : r.uncorrected[g]);
    std::tie(t.value, t.std_dev) = mean_and_sem(t.per_repetition);
    report.targets.push_back(std::move(t));
  }
  return report;
}

}  // namespace detail

/// Supplies the dataset for repetition r (simulations redraw it).
using DataSource = std::function<Dataset(std::size_t repetition)>;

/// Repetition r runs with master seed derive_seed(params.seed, r).
inline ImportanceResult importance_all(const DataSource& source, const std::vector<Group>& groups,
                                       const ForestParams& params, const ImportanceOptions& options = {}) {
  if (options.repetitions < 1) throw Error(ErrorKind::InvalidParams, "repetitions must be >= 1");
  std::vector<RepetitionResult> reps;
  for (std::size_t r = 0; r < options.repetitions; ++r) {
    ForestParams rep_params = params;
    rep_params.seed = derive_seed(params.seed, r);
    reps.push_back(run_repetition(source(r), groups, rep_params, options));
  }
  return {detail::aggregate(Variant::corrected, groups, reps), detail::aggregate(Variant::uncorrected, groups, reps)};
}

/// Fixed dataset: repetitions re-randomize the forests only.
inline ImportanceResult importance_all(const Dataset& d, const std::vector<Group>& groups,
                                       const ForestParams& params, const ImportanceOptions& options = {}) {
  return importance_all([&](std::size_t) { return d; }, groups, params, options);
}

}  // namespace cfvi
