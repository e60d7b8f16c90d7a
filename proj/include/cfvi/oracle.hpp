#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/parallel.hpp"
#include "cfvi/rng.hpp"
#include "cfvi/simulation.hpp"

namespace cfvi {

/// Theoretical importance of a drop set, estimated two ways from the same
/// nested Monte-Carlo pass:
///   squared_difference      E[(tau - E[tau | X_-J])^2] / V[tau]
///   variance_decomposition  (V[tau] - V[E[tau | X_-J]]) / V[tau]
struct OracleImportance {
  double squared_difference = 0.0;
  double variance_decomposition = 0.0;
  double tau_variance = 0.0;
};

struct OracleOptions {
  std::size_t n_mc = 1'000'000;  // outer draws; inner draws = ceil(sqrt(n_mc))
  std::uint64_t seed = 1;
  std::size_t num_threads = 0;
};

namespace detail {

// Outer draws are cut into this many blocks, each with its own stream, so the
// estimate does not depend on the worker count.
inline constexpr std::size_t kOracleBlocks = 64;

inline std::size_t inner_draws(std::size_t n_mc) {
  return static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_mc))));
}

/// Running mean and sum of squared deviations (Welford), mergeable.
struct Moments {
  double count = 0.0, mean = 0.0, m2 = 0.0;

  void add(double v) {
    count += 1.0;
    const double delta = v - mean;
    mean += delta / count;
    m2 += delta * (v - mean);
  }
  void merge(const Moments& o) {
    if (o.count == 0.0) return;
    const double total = count + o.count;
    const double delta = o.mean - mean;
    mean += delta * o.count / total;
    m2 += o.m2 + delta * delta * count * o.count / total;
    count = total;
  }
  double variance() const { return m2 / count; }
};

/// Runs `outer(rng, x, accumulators)` for n_mc outer draws split over
/// kOracleBlocks streams, then merges block results in block order.
template <typename Acc, typename Fn>
Acc run_blocks(std::size_t n_mc, std::uint64_t seed, std::size_t threads, std::size_t p, Fn&& outer) {
  std::vector<Acc> blocks(kOracleBlocks);
  parallel_for(kOracleBlocks, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    std::vector<double> x(p), scratch(p);
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng(derive_seed(seed, b));
      const std::size_t lo = n_mc * b / kOracleBlocks;
      const std::size_t hi = n_mc * (b + 1) / kOracleBlocks;
      for (std::size_t i = lo; i < hi; ++i) outer(rng, x, scratch, blocks[b]);
    }
  });
  Acc total;
  for (const auto& b : blocks) total.merge(b);
  return total;
}

inline bool disjoint(const FeatureSet& a, const FeatureSet& b) {
  for (std::size_t j : a) {
    if (b.contains(j)) return false;
  }
  return true;
}

// With `exact`, E[tau | X_-J] = tau and the inner loop is skipped.
inline OracleImportance oracle_importance(const DgpSpec::Fn& tau, const DgpSpec& sampler, const FeatureSet& drop,
                                          const OracleOptions& options, bool exact) {
  if (options.n_mc < 2) throw Error(ErrorKind::InvalidArgument, "n_mc must be >= 2");
  drop.check(sampler.p);
  const std::size_t inner = exact ? 0 : inner_draws(options.n_mc);

  struct Acc {
    Moments tau, conditional;
    double squared_gap = 0.0;
    void merge(const Acc& o) {
      tau.merge(o.tau);
      conditional.merge(o.conditional);
      squared_gap += o.squared_gap;
    }
  };
  const Acc acc = run_blocks<Acc>(
      options.n_mc, options.seed, options.num_threads, sampler.p,
      [&](Rng& rng, std::vector<double>& x, std::vector<double>& redraw, Acc& a) {
        sampler.sample(rng, x);
        const double t = tau(x);
        double conditional = t;
        if (inner > 0) {
          double sum = 0.0;
          redraw = x;
          for (std::size_t k = 0; k < inner; ++k) {
            sampler.resample(rng, redraw, drop);
            sum += tau(redraw);
          }
          conditional = sum / static_cast<double>(inner);
        }
        a.tau.add(t);
        a.conditional.add(conditional);
        a.squared_gap += (t - conditional) * (t - conditional);
      });

  const double v = acc.tau.variance();
  if (!(v > 1e-12)) throw Error(ErrorKind::ZeroVariance, "treatment effect variance is zero");
  OracleImportance out;
  out.tau_variance = v;
  out.squared_difference = acc.squared_gap / acc.tau.count / v;
  out.variance_decomposition = (v - acc.conditional.variance()) / v;
  return out;
}

}  // namespace detail

/// Nested Monte Carlo: for each outer X, E[tau | X_-J] is the mean of tau over
/// ceil(sqrt(n_mc)) redraws of X_J from its conditional law.
inline OracleImportance oracle_importance(const DgpSpec::Fn& tau, const DgpSpec& sampler, const FeatureSet& drop,
                                          const OracleOptions& options = {}) {
  return detail::oracle_importance(tau, sampler, drop, options, false);
}

/// As above with tau = spec.effect. A drop set that misses every
/// heterogeneity column leaves tau a function of the kept columns, so the
/// conditional mean is tau itself.
inline OracleImportance oracle_importance(const DgpSpec& spec, const FeatureSet& drop,
                                          const OracleOptions& options = {}) {
  return detail::oracle_importance(spec.effect, spec, drop, options, detail::disjoint(drop, spec.heterogeneity));
}

/// Asymptotic bias of the importance computed without the correction term:
///   E[ Cov[tau, g | X_-J]^2 / E[g | X_-J]^2 ] / V[tau],  g = pi (1 - pi),
/// by nested Monte Carlo with unbiased inner covariances. The covariance
/// vanishes when the drop set misses every heterogeneity column.
inline double oracle_bias(const DgpSpec& spec, const FeatureSet& drop, const OracleOptions& options = {}) {
  if (options.n_mc < 2) throw Error(ErrorKind::InvalidArgument, "n_mc must be >= 2");
  drop.check(spec.p);
  const bool exact = detail::disjoint(drop, spec.heterogeneity);
  const std::size_t inner = std::max<std::size_t>(2, detail::inner_draws(options.n_mc));

  struct Acc {
    detail::Moments tau;
    double ratio_sum = 0.0;
    void merge(const Acc& o) {
      tau.merge(o.tau);
      ratio_sum += o.ratio_sum;
    }
  };
  const Acc acc = detail::run_blocks<Acc>(
      options.n_mc, options.seed, options.num_threads, spec.p,
      [&](Rng& rng, std::vector<double>& x, std::vector<double>& redraw, Acc& a) {
        spec.sample(rng, x);
        a.tau.add(spec.effect(x));
        if (exact) return;
        redraw = x;
        detail::Moments t_m, g_m;
        double cross = 0.0;  // sum of (t - t_mean)(g - g_mean), Welford style
        for (std::size_t k = 0; k < inner; ++k) {
          spec.resample(rng, redraw, drop);
          const double t = spec.effect(redraw);
          const double pi = spec.propensity(redraw);
          const double g = pi * (1.0 - pi);
          const double dt = t - t_m.mean;
          t_m.add(t);
          g_m.add(g);
          cross += dt * (g - g_m.mean);
        }
        const double cov = cross / static_cast<double>(inner - 1);
        a.ratio_sum += cov * cov / (g_m.mean * g_m.mean);
      });

  const double v = acc.tau.variance();
  if (!(v > 1e-12)) throw Error(ErrorKind::ZeroVariance, "treatment effect variance is zero");
  return acc.ratio_sum / acc.tau.count / v;
}

}  // namespace cfvi
