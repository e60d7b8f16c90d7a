#include <gtest/gtest.h>

#include <cmath>

#include "cfvi/simulation.hpp"

namespace cfvi {
namespace {

double variance(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double effect_share(const SimulatedData& sim) {
  std::vector<double> tau;
  for (std::size_t i = 0; i < sim.data.n(); ++i) tau.push_back(sim.spec.effect(sim.data.features().row(i)));
  return variance(tau) / variance(sim.data.outcome());
}

TEST(FirstDesign, MomentsMatchTheConstruction) {
  const auto sim = gen_experiment1(100'000, 1);
  const auto& X = sim.data.features();
  double s15 = 0, s11 = 0, s55 = 0, m1 = 0, m5 = 0, treated = 0, positive = 0;
  const double n = 100'000;
  for (std::size_t i = 0; i < sim.data.n(); ++i) {
    m1 += X(i, 0) / n;
    m5 += X(i, 4) / n;
  }
  for (std::size_t i = 0; i < sim.data.n(); ++i) {
    s15 += (X(i, 0) - m1) * (X(i, 4) - m5);
    s11 += (X(i, 0) - m1) * (X(i, 0) - m1);
    s55 += (X(i, 4) - m5) * (X(i, 4) - m5);
    if (X(i, 0) > 0) {
      ++positive;
      treated += sim.data.treatment()[i];
    }
  }
  EXPECT_NEAR(s15 / std::sqrt(s11 * s55), 0.9, 0.01);
  EXPECT_NEAR(treated / positive, 0.6, 0.01);
}

TEST(FirstDesign, EffectShareOfOutcomeVariance) {
  EXPECT_NEAR(effect_share(gen_experiment1(1'000'000, 2)), 0.0556, 0.005);
}

TEST(SecondDesign, EffectShareOfOutcomeVariance) {
  EXPECT_NEAR(effect_share(gen_experiment2(1'000'000, 3)), 0.0146, 0.003);
}

TEST(ThirdDesign, FirstInputIsACube) {
  const auto sim = gen_experiment3(100'000, 4);
  double m = 0;
  for (std::size_t i = 0; i < sim.data.n(); ++i) m += sim.data.features()(i, 0);
  EXPECT_NEAR(m / 100'000, 0.25, 0.005);
  EXPECT_EQ(sim.data.p(), 5u);
}

TEST(EvaluateDgp, PlugsIntoTheOutcomeEquation) {
  const auto spec = experiment1_spec();
  const std::vector<double> x{1, -1, 0, 0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(evaluate_dgp(spec, x, 1, 0.0), 1.0);
  const std::vector<double> z{0.5, 2, 1.5, -2, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(evaluate_dgp(spec, z, 0, 0.25), spec.baseline(z) + 0.25);
  EXPECT_DOUBLE_EQ(evaluate_dgp(spec, z, 1, 0.25) - evaluate_dgp(spec, z, 0, 0.25), spec.effect(z));

  auto flat = spec;
  flat.effect = [](std::span<const double>) { return 0.0; };
  EXPECT_EQ(evaluate_dgp(flat, z, 1, -0.3), evaluate_dgp(flat, z, 0, -0.3));
}

TEST(Generate, OutcomesFollowTheirOwnTreatment) {
  const auto sim = gen_experiment2(500, 5);
  for (std::size_t i = 0; i < 500; ++i) {
    const auto x = sim.data.features().row(i);
    EXPECT_EQ(sim.data.outcome()[i], evaluate_dgp(sim.spec, x, sim.data.treatment()[i], sim.noise[i]));
  }
}

TEST(Generate, SeedDeterminesTheData) {
  EXPECT_TRUE(gen_experiment3(200, 6).data == gen_experiment3(200, 6).data);
  EXPECT_FALSE(gen_experiment3(200, 6).data == gen_experiment3(200, 7).data);
  EXPECT_TRUE(simulate("experiment1", 50, 8).data == gen_experiment1(50, 8).data);
  EXPECT_THROW(simulate("experiment9", 50, 8), Error);
  EXPECT_THROW(gen_experiment1(0, 1), Error);
}

TEST(Resample, KeepsTheJointLaw) {
  const auto spec = experiment1_spec();
  Rng rng(9);
  std::vector<double> x(8);
  const std::size_t n = 100'000;
  double s15 = 0, s11 = 0, s55 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    spec.sample(rng, x);
    spec.resample(rng, x, FeatureSet{0});
    s15 += x[0] * x[4];
    s11 += x[0] * x[0];
    s55 += x[4] * x[4];
  }
  EXPECT_NEAR(s15 / n, 0.9, 0.015);
  EXPECT_NEAR(s11 / n, 1.0, 0.015);
  EXPECT_NEAR(s55 / n, 1.0, 0.015);
}

}  // namespace
}  // namespace cfvi
