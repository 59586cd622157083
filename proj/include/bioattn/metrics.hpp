#pragma once

// Image quality metrics (MSE, PSNR, SSIM), the Wilcoxon signed-rank test,
// and the per-method report that ties them together.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "bioattn/error.hpp"
#include "bioattn/tensor.hpp"

namespace bioattn::metrics {

inline double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(max^2 / mse); +inf for identical images.
inline double psnr(const Tensor& a, const Tensor& b, double max_val = 1.0) {
  if (!(max_val > 0)) throw ConfigError("psnr: max_val must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / m);
}

struct SSIMConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window == 0 || window % 2 == 0) throw ConfigError("ssim: window must be odd");
    if (!(sigma > 0) || !(k1 > 0) || !(k2 > 0) || !(dynamic_range > 0)) {
      throw ConfigError("ssim: sigma, K1, K2 and L must be positive");
    }
  }
};

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = static_cast<double>(size / 2);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                        const std::vector<double>& k) {
  const std::size_t ks = k.size(), oh = h - ks + 1, ow = w - ks + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < ks; ++t) s += k[t] * img[i * w + j + t];
      rows[i * ow + j] = s;
    }
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < ks; ++t) s += k[t] * rows[(i + t) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully contained Gaussian windows of two H x W images.
inline double ssim(const Tensor& a, const Tensor& b, const SSIMConfig& cfg = {}) {
  cfg.validate();
  require_rank(a, 2, "ssim");
  require_same_shape(a, b, "ssim");
  const std::size_t h = a.extent(0), w = a.extent(1);
  if (h < cfg.window || w < cfg.window) {
    throw ShapeError(fmt::format("ssim: image {}x{} smaller than {}x{} window", h, w, cfg.window, cfg.window));
  }
  const auto k = detail::gaussian_window(cfg.window, cfg.sigma);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = detail::filter_valid(a.values(), h, w, k);
  const auto mu_b = detail::filter_valid(b.values(), h, w, k);
  const auto e_aa = detail::filter_valid(aa, h, w, k);
  const auto e_bb = detail::filter_valid(bb, h, w, k);
  const auto e_ab = detail::filter_valid(ab, h, w, k);
  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

// ---- Wilcoxon signed-rank --------------------------------------------------

/// Effective sample sizes up to this use the exact null distribution.
inline constexpr std::size_t kWilcoxonExactMax = 25;

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  std::size_t n_effective = 0;
  double p_two_sided = 1.0;
  double p_greater = 1.0;  // alternative: x tends to exceed y
  double p_less = 1.0;
  bool exact = true;
  bool degenerate = false;
};

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Null distribution of W+ for the given (possibly tied) ranks: entry s counts the
/// sign assignments with 2*W+ == s. Ranks are half-integers, so doubling makes them exact.
inline std::vector<double> signed_rank_null_counts(std::span<const double> ranks) {
  std::vector<std::size_t> doubled(ranks.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
    total += doubled[i];
  }
  std::vector<double> counts(total + 1, 0.0);
  counts[0] = 1.0;
  std::size_t reach = 0;
  for (auto r : doubled) {
    reach += r;
    for (std::size_t s = reach; s >= r; --s) {
      counts[s] += counts[s - r];
      if (s == r) break;
    }
  }
  return counts;
}

inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                           std::size_t exact_max = kWilcoxonExactMax) {
  if (x.size() != y.size()) throw ShapeError("wilcoxon: samples must have equal length");
  if (x.empty()) throw ShapeError("wilcoxon: need at least one pair");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult res;
  res.n_effective = diffs.size();
  if (diffs.empty()) {
    res.degenerate = true;
    return res;
  }
  std::vector<double> mags(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) mags[i] = std::abs(diffs[i]);
  const auto ranks = average_ranks(mags);
  for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0 ? res.w_plus : res.w_minus) += ranks[i];
  res.statistic = std::min(res.w_plus, res.w_minus);
  const std::size_t n = diffs.size();

  if (n <= exact_max) {
    const auto counts = signed_rank_null_counts(ranks);
    const double all = std::ldexp(1.0, static_cast<int>(n));
    auto cdf = [&](double w) {  // P(W+ <= w)
      const auto lim = static_cast<std::size_t>(std::llround(2.0 * w));
      double c = 0.0;
      for (std::size_t s = 0; s <= lim && s < counts.size(); ++s) c += counts[s];
      return c / all;
    };
    res.exact = true;
    res.p_greater = cdf(res.w_minus);  // P(W+ >= observed W+) by symmetry
    res.p_less = cdf(res.w_plus);
    res.p_two_sided = std::min(1.0, 2.0 * cdf(res.statistic));
    return res;
  }

  res.exact = false;
  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  double tie_term = 0.0;
  {
    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double sd = std::sqrt(nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0);
  auto upper_tail = [](double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); };
  res.p_greater = upper_tail((res.w_plus - mean - 0.5) / sd);
  res.p_less = upper_tail((res.w_minus - mean - 0.5) / sd);
  const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / sd;
  res.p_two_sided = std::min(1.0, 2.0 * upper_tail(z));
  return res;
}

// ---- reports ---------------------------------------------------------------

struct ImageMetrics {
  std::string id;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline ImageMetrics evaluate_image(std::string id, const Tensor& reconstruction, const Tensor& truth,
                                   double max_val = 1.0, const SSIMConfig& cfg = {}) {
  return {std::move(id), mse(reconstruction, truth), psnr(reconstruction, truth, max_val),
          ssim(reconstruction, truth, cfg)};
}

struct MethodMetrics {
  std::string method;
  std::optional<std::size_t> overhead;  // learnable parameters added over the baseline
  std::vector<ImageMetrics> rows;
  double mean_mse = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;

  void aggregate() {
    if (rows.empty()) throw ContractError("method '" + method + "' has no rows");
    double m = 0, p = 0, s = 0;
    for (const auto& r : rows) {
      m += r.mse;
      p += r.psnr;
      s += r.ssim;
    }
    const double n = static_cast<double>(rows.size());
    mean_mse = m / n;
    mean_psnr = p / n;
    mean_ssim = s / n;
  }

  std::vector<double> ssim_values() const {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r.ssim);
    return v;
  }
};

struct Comparison {
  std::string reference;
  std::string competitor;
  WilcoxonResult test;  // x = reference SSIM, y = competitor SSIM
};

struct MetricsReport {
  std::vector<MethodMetrics> methods;
  std::vector<Comparison> comparisons;

  const MethodMetrics& method(const std::string& name) const {
    for (const auto& m : methods)
      if (m.method == name) return m;
    throw ContractError("report has no method '" + name + "'");
  }

  const Comparison* comparison_for(const std::string& competitor) const {
    for (const auto& c : comparisons)
      if (c.competitor == competitor) return &c;
    return nullptr;
  }

  /// Recomputes aggregates and pairs `reference` against every other method in `competitors`.
  void finalize(const std::string& reference, const std::vector<std::string>& competitors) {
    for (auto& m : methods) m.aggregate();
    comparisons.clear();
    const auto& ref = method(reference);
    for (const auto& name : competitors) {
      if (name == reference) continue;
      const auto& other = method(name);
      if (other.rows.size() != ref.rows.size()) throw ContractError("unpaired rows for '" + name + "'");
      const auto x = ref.ssim_values(), y = other.ssim_values();
      comparisons.push_back({reference, name, wilcoxon_signed_rank(x, y)});
    }
  }

  static std::string num(double v) { return fmt::format("{}", v); }

  /// One row per image, then one aggregate row per method carrying the
  /// Wilcoxon comparison against the reference where one exists.
  std::string to_csv() const {
    std::string out = "kind,method,image,overhead,mse,psnr,ssim,wilcoxon_w,wilcoxon_p_two_sided,wilcoxon_p_one_sided\n";
    for (const auto& m : methods) {
      for (const auto& r : m.rows) {
        out += fmt::format("image,{},{},,{},{},{},,,\n", m.method, r.id, num(r.mse), num(r.psnr), num(r.ssim));
      }
    }
    for (const auto& m : methods) {
      const std::string overhead = m.overhead ? std::to_string(*m.overhead) : "";
      std::string w, p2, p1;
      if (const auto* c = comparison_for(m.method)) {
        w = num(c->test.statistic);
        p2 = num(c->test.p_two_sided);
        p1 = num(c->test.p_greater);
      }
      out += fmt::format("aggregate,{},,{},{},{},{},{},{},{}\n", m.method, overhead, num(m.mean_mse),
                         num(m.mean_psnr), num(m.mean_ssim), w, p2, p1);
    }
    return out;
  }

  static nlohmann::json jnum(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["methods"] = nlohmann::json::array();
    for (const auto& m : methods) {
      nlohmann::json mj;
      mj["method"] = m.method;
      mj["overhead"] = m.overhead ? nlohmann::json(*m.overhead) : nlohmann::json(nullptr);
      mj["mean"] = {{"mse", jnum(m.mean_mse)}, {"psnr", jnum(m.mean_psnr)}, {"ssim", jnum(m.mean_ssim)}};
      mj["rows"] = nlohmann::json::array();
      for (const auto& r : m.rows) {
        mj["rows"].push_back({{"id", r.id}, {"mse", jnum(r.mse)}, {"psnr", jnum(r.psnr)}, {"ssim", jnum(r.ssim)}});
      }
      j["methods"].push_back(std::move(mj));
    }
    j["comparisons"] = nlohmann::json::array();
    for (const auto& c : comparisons) {
      j["comparisons"].push_back({{"reference", c.reference},
                                  {"competitor", c.competitor},
                                  {"metric", "ssim"},
                                  {"statistic", jnum(c.test.statistic)},
                                  {"w_plus", jnum(c.test.w_plus)},
                                  {"w_minus", jnum(c.test.w_minus)},
                                  {"n_effective", c.test.n_effective},
                                  {"exact", c.test.exact},
                                  {"degenerate", c.test.degenerate},
                                  {"p_two_sided", jnum(c.test.p_two_sided)},
                                  {"p_one_sided", jnum(c.test.p_greater)}});
    }
    return j;
  }
};

}  // namespace bioattn::metrics
