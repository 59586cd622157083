#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "bioattn/metrics.hpp"
#include "oracles.hpp"

using namespace bioattn;
using namespace bioattn::metrics;

TEST(Metrics, MseHandValues) {
  const Tensor a = oracle::random_tensor(Shape{4, 4}, 1);
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_NEAR(mse(Tensor(Shape{3, 3}), Tensor::full(Shape{3, 3}, 0.1)), 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(mse(Tensor(Shape{2}, {0, 0}), Tensor(Shape{2}, {3, 4})), 12.5);
  EXPECT_THROW(mse(a, Tensor(Shape{4, 5})), ShapeError);
}

TEST(Metrics, MseSymmetricAndShiftInvariant) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor a = oracle::random_tensor(Shape{8, 8}, s), b = oracle::random_tensor(Shape{8, 8}, s + 100);
    Tensor as = a, bs = b;
    for (auto& v : as.data()) v += 0.75;
    for (auto& v : bs.data()) v += 0.75;
    EXPECT_EQ(mse(a, b), mse(b, a));
    EXPECT_NEAR(mse(as, bs), mse(a, b), 1e-14);
  }
}

TEST(Metrics, Psnr) {
  const Tensor z(Shape{4, 4});
  EXPECT_NEAR(psnr(z, Tensor::full(Shape{4, 4}, 0.1)), 20.0, 1e-12);
  EXPECT_EQ(psnr(z, z), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(z, Tensor::full(Shape{4, 4}, std::sqrt(0.0002878))), 35.409, 1e-3);
  EXPECT_NEAR(psnr(z, Tensor::full(Shape{4, 4}, 1.0)), 0.0, 1e-12);
  EXPECT_THROW(psnr(z, z, 0.0), ConfigError);

  double prev = std::numeric_limits<double>::infinity();
  for (double d = 0.01; d < 1.0; d += 0.05) {
    const double p = psnr(z, Tensor::full(Shape{4, 4}, d));
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Metrics, SsimClosedForms) {
  const Tensor a = oracle::random_tensor(Shape{16, 16}, 3, 0, 1);
  EXPECT_EQ(ssim(a, a), 1.0);
  const double c1 = 0.01 * 0.01;
  EXPECT_NEAR(ssim(Tensor(Shape{16, 16}), Tensor::full(Shape{16, 16}, 1.0)), c1 / (1 + c1), 1e-12);
  EXPECT_NEAR(ssim(Tensor(Shape{16, 16}), Tensor::full(Shape{16, 16}, 1.0)), 9.999e-5, 1e-8);
  EXPECT_THROW(ssim(Tensor(Shape{8, 8}), Tensor(Shape{8, 8})), ShapeError);
}

TEST(Metrics, SsimSymmetricAndBounded) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor a = oracle::random_tensor(Shape{20, 24}, s, 0, 1), b = oracle::random_tensor(Shape{20, 24}, s + 50, 0, 1);
    const double ab = ssim(a, b);
    EXPECT_NEAR(ab, ssim(b, a), 1e-14);
    EXPECT_GT(ab, -1.0);
    EXPECT_LE(ab, 1.0);
  }
  // Anti-correlated: strongly negative but still above -1.
  const Tensor a = oracle::random_tensor(Shape{16, 16}, 9, 0, 1);
  Tensor inv = a;
  for (auto& v : inv.data()) v = 1.0 - v;
  EXPECT_LT(ssim(a, inv), 0.0);
  EXPECT_GT(ssim(a, inv), -1.0);
}

TEST(Wilcoxon, HandValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const auto same = wilcoxon_signed_rank(x, x);
  EXPECT_TRUE(same.degenerate);
  EXPECT_EQ(same.p_two_sided, 1.0);
  EXPECT_EQ(same.statistic, 0.0);

  const std::vector<double> y5{0.5, 1.2, 2.9, 3.0, 4.1};
  const auto r5 = wilcoxon_signed_rank(x, y5);
  EXPECT_EQ(r5.w_minus, 0.0);
  EXPECT_EQ(r5.w_plus, 15.0);
  EXPECT_DOUBLE_EQ(r5.p_two_sided, 0.0625);
  EXPECT_DOUBLE_EQ(r5.p_greater, 1.0 / 32);
  EXPECT_DOUBLE_EQ(r5.p_less, 1.0);

  const std::vector<double> x6{1, 2, 3, 4, 5, 6}, y6{0, 0, 0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(wilcoxon_signed_rank(x6, y6).p_two_sided, 0.03125);
  EXPECT_THROW(wilcoxon_signed_rank(x6, y5), ShapeError);
}

TEST(Wilcoxon, ExactMatchesEnumerationWithTies) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Small integer magnitudes force ties and some zero differences.
      const double mag = static_cast<double>(rng() % 4);
      x[i] = static_cast<double>(rng() % 7);
      y[i] = x[i] + (rng() % 2 ? mag : -mag);
    }
    const auto got = wilcoxon_signed_rank(x, y);
    const auto want = oracle::wilcoxon_enumerate(x, y);
    if (got.degenerate) continue;
    EXPECT_NEAR(got.w_plus, want.w_plus, 1e-12);
    EXPECT_NEAR(got.p_two_sided, want.p_two_sided, 1e-12);
    EXPECT_NEAR(got.p_greater, want.p_greater, 1e-12);
  }
}

TEST(Wilcoxon, NormalApproximationIsCloseToExact) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d(0.3, 1.0);
  std::vector<double> x(25), y(25, 0.0);
  for (auto& v : x) v = d(rng);
  const auto exact = wilcoxon_signed_rank(x, y);
  const auto approx = wilcoxon_signed_rank(x, y, 0);
  EXPECT_TRUE(exact.exact);
  EXPECT_FALSE(approx.exact);
  EXPECT_NEAR(exact.p_two_sided, approx.p_two_sided, 0.01);
  EXPECT_NEAR(exact.p_greater, approx.p_greater, 0.01);
}

TEST(Report, AggregatesCsvAndJson) {
  MetricsReport report;
  MethodMetrics truth{"truth", 0, {}};
  MethodMetrics other{"other", 5, {}};
  for (std::uint64_t i = 0; i < 4; ++i) {
    const Tensor img = oracle::random_tensor(Shape{16, 16}, i, 0, 1);
    truth.rows.push_back(evaluate_image("img" + std::to_string(i), img, img));
    Tensor noisy = img;
    for (auto& v : noisy.data()) v += 0.05 * static_cast<double>(i + 1);
    other.rows.push_back(evaluate_image("img" + std::to_string(i), noisy, img));
  }
  report.methods = {truth, other};
  report.finalize("truth", {"truth", "other"});

  const auto& t = report.method("truth");
  EXPECT_EQ(t.mean_mse, 0.0);
  EXPECT_EQ(t.mean_ssim, 1.0);
  EXPECT_EQ(t.mean_psnr, std::numeric_limits<double>::infinity());
  const auto& o = report.method("other");
  double mean = 0;
  for (const auto& r : o.rows) mean += r.mse;
  EXPECT_DOUBLE_EQ(o.mean_mse, mean / 4);
  ASSERT_EQ(report.comparisons.size(), 1u);
  EXPECT_EQ(report.comparison_for("other")->test.p_greater, 1.0 / 16);
  EXPECT_EQ(report.comparison_for("truth"), nullptr);

  const std::string csv = report.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "kind,method,image,overhead,mse,psnr,ssim,wilcoxon_w,wilcoxon_p_two_sided,wilcoxon_p_one_sided");
  EXPECT_NE(csv.find("image,truth,img0,,0,inf,1,,,"), std::string::npos);
  EXPECT_NE(csv.find("aggregate,other,,5,"), std::string::npos);
  EXPECT_NE(csv.find(",0.125,0.0625\n"), std::string::npos);

  const auto j = report.to_json();
  EXPECT_EQ(j["methods"][0]["mean"]["psnr"], "inf");
  EXPECT_EQ(j["comparisons"][0]["competitor"], "other");
  EXPECT_EQ(j["comparisons"][0]["p_one_sided"], 0.0625);
  EXPECT_THROW(report.method("nope"), ContractError);
}
