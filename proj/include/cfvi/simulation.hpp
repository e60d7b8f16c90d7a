#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfvi/data.hpp"
#include "cfvi/error.hpp"
#include "cfvi/rng.hpp"

namespace cfvi {

/// Data-generating process Y = mu(X) + tau(X) W + eps, W ~ Bernoulli(pi(X)),
/// with every piece in closed form.
struct DgpSpec {
  using Fn = std::function<double(std::span<const double>)>;

  std::string name;
  std::size_t p = 0;
  // Draws X from its joint law.
  std::function<void(Rng&, std::span<double>)> sample;
  // Redraws the coordinates in `drop` from their law given the others.
  std::function<void(Rng&, std::span<double>, const FeatureSet&)> resample;
  Fn propensity;
  Fn baseline;
  Fn effect;
  double noise_sd = 0.0;
  FeatureSet heterogeneity;  // 0-based columns tau depends on
};

struct SimulatedData {
  Dataset data;
  DgpSpec spec;
  std::vector<double> noise;  // eps drawn for each row
};

inline double evaluate_dgp(const DgpSpec& spec, std::span<const double> x, int w, double noise) {
  return spec.baseline(x) + spec.effect(x) * static_cast<double>(w) + noise;
}

/// Noise law "N(0, 0.1)" is taken as variance 0.1.
inline const double kSimulationNoiseSd = std::sqrt(0.1);

namespace detail {

inline double positive_part(double v) { return v > 0.0 ? v : 0.0; }

// Experiments 1 and 2: X ~ N(0, Sigma), p = 8, Sigma = I except
// Cov(X1, X5) = 0.9. Column 4 is built as 0.9 Z1 + sqrt(0.19) Z5.
inline void fill_correlated_gaussian(DgpSpec& spec) {
  static const double kResidualSd = std::sqrt(1.0 - 0.9 * 0.9);
  spec.p = 8;
  spec.sample = [](Rng& rng, std::span<double> x) {
    for (double& v : x) v = rng.normal();
    x[4] = 0.9 * x[0] + kResidualSd * x[4];
  };
  spec.resample = [](Rng& rng, std::span<double> x, const FeatureSet& drop) {
    const bool first = drop.contains(0);
    const bool fifth = drop.contains(4);
    if (first && fifth) {
      x[0] = rng.normal();
      x[4] = 0.9 * x[0] + kResidualSd * rng.normal();
    } else if (first) {
      x[0] = 0.9 * x[4] + kResidualSd * rng.normal();
    } else if (fifth) {
      x[4] = 0.9 * x[0] + kResidualSd * rng.normal();
    }
    for (std::size_t j : drop) {
      if (j != 0 && j != 4) x[j] = rng.normal();
    }
  };
  spec.propensity = [](std::span<const double> x) { return x[0] > 0.0 ? 0.6 : 0.4; };
  spec.noise_sd = kSimulationNoiseSd;
}

}  // namespace detail

inline DgpSpec experiment1_spec() {
  DgpSpec spec;
  spec.name = "experiment1";
  detail::fill_correlated_gaussian(spec);
  spec.effect = [](std::span<const double> x) {
    return detail::positive_part(x[0]) + 0.6 * detail::positive_part(x[1]);
  };
  spec.baseline = [](std::span<const double> x) {
    const double v = x[2] * x[3];
    return v * v;
  };
  spec.heterogeneity = FeatureSet{0, 1};
  return spec;
}

inline DgpSpec experiment2_spec() {
  DgpSpec spec;
  spec.name = "experiment2";
  detail::fill_correlated_gaussian(spec);
  spec.effect = [](std::span<const double> x) { return 0.6 * detail::positive_part(x[1]); };
  spec.baseline = [](std::span<const double> x) {
    const double v = x[2] * x[3];
    return detail::positive_part(x[0]) + v * v;
  };
  spec.heterogeneity = FeatureSet{1};
  return spec;
}

/// p = 5 independent inputs; X1 = U^3, the rest Uniform(0, 1); pi(X) = X1 and
/// tau = 10 pi (1 - pi).
inline DgpSpec experiment3_spec() {
  DgpSpec spec;
  spec.name = "experiment3";
  spec.p = 5;
  spec.sample = [](Rng& rng, std::span<double> x) {
    const double u = rng.uniform();
    x[0] = u * u * u;
    for (std::size_t j = 1; j < x.size(); ++j) x[j] = rng.uniform();
  };
  spec.resample = [](Rng& rng, std::span<double> x, const FeatureSet& drop) {
    for (std::size_t j : drop) {
      const double u = rng.uniform();
      x[j] = j == 0 ? u * u * u : u;
    }
  };
  spec.propensity = [](std::span<const double> x) { return x[0]; };
  spec.effect = [](std::span<const double> x) { return 10.0 * x[0] * (1.0 - x[0]); };
  spec.baseline = [](std::span<const double> x) { return x[1]; };
  spec.noise_sd = kSimulationNoiseSd;
  spec.heterogeneity = FeatureSet{0};
  return spec;
}

inline const std::vector<std::string>& dgp_names() {
  static const std::vector<std::string> names{"experiment1", "experiment2", "experiment3"};
  return names;
}

inline DgpSpec dgp_by_name(std::string_view name) {
  if (name == "experiment1") return experiment1_spec();
  if (name == "experiment2") return experiment2_spec();
  if (name == "experiment3") return experiment3_spec();
  throw Error(ErrorKind::InvalidArgument, "unknown DGP '" + std::string(name) + "'");
}

/// Draws n rows from one stream seeded by `seed`: per row X, then W, then eps.
inline SimulatedData generate(const DgpSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "n must be >= 1");
  Rng rng(seed);
  FeatureMatrix X(n, spec.p);
  std::vector<double> y(n), noise(n), x(spec.p);
  std::vector<std::uint8_t> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    spec.sample(rng, x);
    w[i] = rng.bernoulli(spec.propensity(x)) ? 1 : 0;
    noise[i] = spec.noise_sd * rng.normal();
    y[i] = evaluate_dgp(spec, x, w[i], noise[i]);
    for (std::size_t j = 0; j < spec.p; ++j) X(i, j) = x[j];
  }
  return {Dataset::create(std::move(X), std::move(y), std::move(w)), spec, std::move(noise)};
}

inline SimulatedData gen_experiment1(std::size_t n, std::uint64_t seed) { return generate(experiment1_spec(), n, seed); }
inline SimulatedData gen_experiment2(std::size_t n, std::uint64_t seed) { return generate(experiment2_spec(), n, seed); }
inline SimulatedData gen_experiment3(std::size_t n, std::uint64_t seed) { return generate(experiment3_spec(), n, seed); }

inline SimulatedData simulate(std::string_view dgp, std::size_t n, std::uint64_t seed) {
  return generate(dgp_by_name(dgp), n, seed);
}

/// Independent datasets; replicate r is generate(spec, n, derive_seed(seed, r)).
inline std::function<Dataset(std::size_t)> replicates(DgpSpec spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "n must be >= 1");
  return [spec = std::move(spec), n, seed](std::size_t r) { return generate(spec, n, derive_seed(seed, r)).data; };
}

}  // namespace cfvi
