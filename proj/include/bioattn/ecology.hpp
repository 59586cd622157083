#pragma once

// Single-species population map N -> lambda * (1 + alpha*N)^(-b) * N:
// trajectories, the nontrivial equilibrium, its linear stability, and
// bifurcation sweeps over lambda.

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "bioattn/error.hpp"

namespace bioattn::ecology {

/// Tolerance used when classifying multipliers against 0 and 1.
inline constexpr double kClassifyTol = 1e-12;

struct EcologyParams {
  double lambda = 1.0;
  double alpha = 2.0;
  double b = 2.0;

  void validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v > 0; };
    if (!ok(lambda) || !ok(alpha) || !ok(b)) {
      throw DomainError(fmt::format("ecology params must be positive and finite (lambda={}, alpha={}, b={})", lambda,
                                    alpha, b));
    }
  }
};

struct Trajectory {
  EcologyParams params;
  double n0 = 0.0;
  std::vector<double> values;  // N_0 .. N_T
};

inline double step(double n, const EcologyParams& p) {
  p.validate();
  if (!(n >= 0)) throw DomainError(fmt::format("population must be nonnegative, got {}", n));
  return p.lambda * std::pow(1.0 + p.alpha * n, -p.b) * n;
}

inline Trajectory iterate(double n0, const EcologyParams& p, std::size_t steps) {
  p.validate();
  if (steps < 1) throw DomainError("iterate: need at least one step");
  Trajectory tr{p, n0, {}};
  tr.values.reserve(steps + 1);
  double n = n0;
  tr.values.push_back(n);
  for (std::size_t t = 0; t < steps; ++t) {
    n = step(n, p);
    tr.values.push_back(n);
  }
  return tr;
}

/// Nontrivial equilibrium (lambda^(1/b) - 1) / alpha; absent for lambda <= 1.
inline std::optional<double> fixed_point(const EcologyParams& p) {
  p.validate();
  if (p.lambda <= 1.0) return std::nullopt;
  return (std::pow(p.lambda, 1.0 / p.b) - 1.0) / p.alpha;
}

enum class StabilityClass { superstable, stable_monotone, stable_oscillatory, neutral, unstable };

inline std::string_view to_string(StabilityClass c) {
  switch (c) {
    case StabilityClass::superstable: return "superstable";
    case StabilityClass::stable_monotone: return "stable-monotone";
    case StabilityClass::stable_oscillatory: return "stable-oscillatory";
    case StabilityClass::neutral: return "neutral";
    case StabilityClass::unstable: return "unstable";
  }
  return "unknown";
}

struct Stability {
  double multiplier;
  StabilityClass cls;
};

inline StabilityClass classify_multiplier(double m) {
  const double a = std::abs(m);
  if (a <= kClassifyTol) return StabilityClass::superstable;
  if (std::abs(a - 1.0) <= kClassifyTol) return StabilityClass::neutral;
  if (a < 1.0) return m > 0 ? StabilityClass::stable_monotone : StabilityClass::stable_oscillatory;
  return StabilityClass::unstable;
}

/// Derivative of the map at the nontrivial equilibrium: 1 - b*(1 - lambda^(-1/b)).
inline Stability stability(const EcologyParams& p) {
  p.validate();
  if (p.lambda <= 1.0) {
    throw DomainError(fmt::format("no nontrivial fixed point for lambda={} <= 1", p.lambda));
  }
  const double m = 1.0 - p.b * (1.0 - std::pow(p.lambda, -1.0 / p.b));
  return {m, classify_multiplier(m)};
}

/// Location of the map's interior maximum, 1/(alpha*(b-1)); only defined for b > 1.
inline std::optional<double> peak_population(const EcologyParams& p) {
  p.validate();
  if (p.b <= 1.0) return std::nullopt;
  return 1.0 / (p.alpha * (p.b - 1.0));
}

struct SweepRow {
  double lambda;
  std::vector<double> samples;
};

struct SweepSpec {
  std::vector<double> lambdas;
  double alpha = 2.0;
  double b = 2.0;
  double n0 = 0.1;
  std::size_t transient = 1000;
  std::size_t samples = 16;
};

inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return out;
}

inline std::vector<SweepRow> bifurcation_sweep(const SweepSpec& spec) {
  if (spec.samples < 1) throw DomainError("bifurcation_sweep: samples must be >= 1");
  std::vector<SweepRow> rows;
  rows.reserve(spec.lambdas.size());
  for (double lambda : spec.lambdas) {
    EcologyParams p{lambda, spec.alpha, spec.b};
    p.validate();
    double n = spec.n0;
    for (std::size_t t = 0; t < spec.transient; ++t) n = step(n, p);
    SweepRow row{lambda, {}};
    row.samples.reserve(spec.samples);
    for (std::size_t s = 0; s < spec.samples; ++s) {
      n = step(n, p);
      row.samples.push_back(n);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace bioattn::ecology
