#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "bioattn/ecology.hpp"

using namespace bioattn;
using namespace bioattn::ecology;

TEST(Ecology, StepHandValues) {
  EXPECT_EQ(step(0.0, {4, 2, 2}), 0.0);
  EXPECT_DOUBLE_EQ(step(0.5, {4, 2, 2}), 0.5);
  EXPECT_DOUBLE_EQ(step(1.0, {1, 2, 2}), 1.0 / 9.0);
  EXPECT_THROW(step(-0.1, {4, 2, 2}), DomainError);
  EXPECT_THROW(step(1.0, {4, -2, 2}), DomainError);
}

TEST(Ecology, FixedPoints) {
  EXPECT_DOUBLE_EQ(*fixed_point({4, 2, 2}), 0.5);
  EXPECT_DOUBLE_EQ(*fixed_point({9, 2, 2}), 1.0);
  EXPECT_FALSE(fixed_point({1, 2, 2}));
  EXPECT_FALSE(fixed_point({0.5, 2, 2}));
}

TEST(Ecology, Stability) {
  const auto s4 = stability({4, 2, 2});
  EXPECT_NEAR(s4.multiplier, 0.0, 1e-15);
  EXPECT_EQ(s4.cls, StabilityClass::superstable);

  const auto s9 = stability({9, 2, 2});
  EXPECT_NEAR(s9.multiplier, -1.0 / 3.0, 1e-15);
  EXPECT_EQ(s9.cls, StabilityClass::stable_oscillatory);

  const auto se = stability({std::exp(4.0), 2, 4});
  EXPECT_NEAR(se.multiplier, 1.0 - 4.0 * (1.0 - std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(se.multiplier, -1.529, 1e-3);
  EXPECT_EQ(se.cls, StabilityClass::unstable);

  EXPECT_EQ(stability({4, 2, 0.5}).cls, StabilityClass::stable_monotone);
  EXPECT_EQ(classify_multiplier(1.0), StabilityClass::neutral);
  EXPECT_EQ(classify_multiplier(-1.0 + 1e-13), StabilityClass::neutral);
  EXPECT_THROW(stability({1, 2, 2}), DomainError);
  EXPECT_EQ(to_string(StabilityClass::stable_monotone), "stable-monotone");
}

TEST(Ecology, IterateExamples) {
  const auto fp = iterate(0.5, {4, 2, 2}, 20);
  ASSERT_EQ(fp.values.size(), 21u);
  for (double v : fp.values) EXPECT_DOUBLE_EQ(v, 0.5);
  for (double v : iterate(0.0, {4, 2, 2}, 10).values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(iterate(0.1, {4, 2, 2}, 0), DomainError);

  for (double lambda : {0.3, 0.9, 1.0}) {
    const auto tr = iterate(5.0, {lambda, 2, 2}, 500);
    for (std::size_t t = 1; t < tr.values.size(); ++t) EXPECT_LE(tr.values[t], tr.values[t - 1]);
    EXPECT_LT(tr.values.back(), tr.values.front());
  }
}

TEST(Ecology, FixedPointIsInvariantForRandomParams) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> lam(1.0, 100.0), al(0.1, 10.0), bb(0.5, 8.0);
  for (int i = 0; i < 1000; ++i) {
    const EcologyParams p{lam(rng), al(rng), bb(rng)};
    const double n = *fixed_point(p);
    EXPECT_NEAR(step(n, p), n, 1e-12 * std::max(1.0, n));
  }
}

TEST(Ecology, NonnegativeClosed) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const EcologyParams p{u(rng) + 0.01, u(rng) / 5 + 0.01, u(rng) / 6 + 0.01};
    EXPECT_GE(step(u(rng), p), 0.0);
  }
}

TEST(Ecology, PeakMatchesGridSearch) {
  for (const EcologyParams p : {EcologyParams{4, 2, 2}, EcologyParams{10, 0.5, 3}, EcologyParams{2, 5, 1.5}}) {
    const double analytic = *peak_population(p);
    EXPECT_DOUBLE_EQ(analytic, 1.0 / (p.alpha * (p.b - 1.0)));
    const double hi = 10.0 * analytic, dx = hi / 200000.0;
    double best = 0.0, arg = 0.0;
    for (int k = 0; k <= 200000; ++k) {
      const double n = k * dx, v = step(n, p);
      if (v > best) best = v, arg = n;
    }
    EXPECT_NEAR(arg, analytic, 2 * dx);
  }
  EXPECT_FALSE(peak_population({4, 2, 1}));
}

TEST(Ecology, SweepB2CollapsesToFixedPoint) {
  SweepSpec spec;
  spec.lambdas = linspace(1.5, 60.0, 25);
  for (const auto& row : bifurcation_sweep(spec)) {
    const double n = *fixed_point({row.lambda, spec.alpha, spec.b});
    ASSERT_EQ(row.samples.size(), spec.samples);
    for (double v : row.samples) EXPECT_NEAR(v, n, 1e-6) << row.lambda;
  }
}

TEST(Ecology, SweepSubunitLambdaDiesOut) {
  SweepSpec spec;
  spec.lambdas = linspace(0.2, 0.95, 8);
  for (const auto& row : bifurcation_sweep(spec))
    for (double v : row.samples) EXPECT_LT(v, 1e-6);
}

TEST(Ecology, SweepB6LargeLambdaIsMultiPoint) {
  SweepSpec spec;
  spec.b = 6.0;
  spec.lambdas = {500.0, 2000.0};
  for (const auto& row : bifurcation_sweep(spec)) {
    ASSERT_EQ(stability({row.lambda, spec.alpha, spec.b}).cls, StabilityClass::unstable);
    const auto [lo, hi] = std::minmax_element(row.samples.begin(), row.samples.end());
    EXPECT_GT(*hi - *lo, 1e-3) << row.lambda;
  }
}

TEST(Ecology, B2TrajectoriesConverge) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lam(1.0001, 100.0), al(0.1, 10.0);
  for (int i = 0; i < 50; ++i) {
    const EcologyParams p{lam(rng), al(rng), 2.0};
    const double target = *fixed_point(p);
    for (double n0 : {0.01, 10.0}) {
      double n = n0;
      std::size_t t = 0;
      while (std::abs(n - target) > 1e-9 && t < 100000) n = step(n, p), ++t;
      EXPECT_LE(std::abs(n - target), 1e-9) << p.lambda << " " << p.alpha;
    }
  }
}
