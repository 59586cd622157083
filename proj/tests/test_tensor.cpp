#include <cmath>

#include <gtest/gtest.h>

#include "bioattn/ops.hpp"
#include "bioattn/tensor_io.hpp"
#include "oracles.hpp"

using namespace bioattn;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.reshaped(Shape{3, 2})(2, 0), 5.0);
  EXPECT_EQ(Tensor::scalar(4.5).item(), 4.5);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_THROW(t.extent(2), ShapeError);
}

TEST(Ops, GlobalAvgPool) {
  const Tensor c = ops::global_avg_pool(Tensor::full(Shape{2, 3, 5, 7}, 3.0));
  for (double v : c.data()) EXPECT_EQ(v, 3.0);

  EXPECT_DOUBLE_EQ(ops::global_avg_pool(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}))[0], 2.5);

  const Tensor x(Shape{1, 2, 2, 2}, {0, 0, 6, 6, 1, 1, 1, 1});
  const Tensor g = ops::global_avg_pool(x);
  EXPECT_DOUBLE_EQ(g[0], 3.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);
  EXPECT_THROW(ops::global_avg_pool(Tensor(Shape{2, 2})), ShapeError);
}

TEST(Ops, GlobalAvgPoolOfChannelConstantIsExact) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 3, c = 1 + rng() % 5, h = 1 + rng() % 9, w = 1 + rng() % 9;
    Tensor x(Shape{n, c, h, w});
    std::vector<double> consts(n * c);
    for (auto& v : consts) v = std::ldexp(static_cast<double>(rng() % 1000), -3);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = consts[i / (h * w)];
    const Tensor g = ops::global_avg_pool(x);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], consts[i]);
  }
}

TEST(Ops, Sigmoid) {
  EXPECT_EQ(ops::sigmoid(0.0), 0.5);
  EXPECT_NEAR(ops::sigmoid(3.0), 0.952574, 1e-6);
  for (double x : {-40.0, -3.0, -0.2, 1.7, 25.0}) EXPECT_NEAR(ops::sigmoid(x) + ops::sigmoid(-x), 1.0, 1e-15);
  EXPECT_EQ(ops::sigmoid(-1000.0), 0.0);
  EXPECT_EQ(ops::sigmoid(1000.0), 1.0);
}

TEST(Ops, L2Normalize) {
  const Tensor v = ops::l2_normalize(Tensor(Shape{1, 2}, {3, 4}));
  EXPECT_NEAR(v[0], 0.6, 1e-12);
  EXPECT_NEAR(v[1], 0.8, 1e-12);
  const Tensor z = ops::l2_normalize(Tensor(Shape{1, 2}, {0, 0}));
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 0.0);
}

TEST(Ops, L2NormalizeNormBand) {
  const double eps = ops::kL2NormEps;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t c = 1 + seed % 17;
    const Tensor v = ops::l2_normalize(oracle::random_tensor(Shape{3, c}, seed));
    for (std::size_t i = 0; i < 3; ++i) {
      double ss = 0;
      for (std::size_t j = 0; j < c; ++j) ss += v(i, j) * v(i, j);
      EXPECT_LE(std::sqrt(ss), 1.0 + 1e-15);
      EXPECT_GE(std::sqrt(ss), 1.0 - 10 * eps * static_cast<double>(c));
    }
  }
}

TEST(Ops, SpatialMoments) {
  const auto m = ops::spatial_moments(Tensor(Shape{1, 2, 2, 2}, {0, 0, 6, 6, 2, 2, 2, 2}));
  EXPECT_DOUBLE_EQ(m.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(m.var[0], 12.0);
  EXPECT_DOUBLE_EQ(m.mean[1], 2.0);
  EXPECT_EQ(m.var[1], 0.0);
  EXPECT_THROW(ops::spatial_moments(Tensor(Shape{1, 1, 1, 1})), ShapeError);

  const Tensor x = oracle::random_tensor(Shape{2, 3, 4, 5}, 3);
  Tensor shifted = x;
  for (auto& v : shifted.data()) v += 7.25;
  const auto a = ops::spatial_moments(x), b = ops::spatial_moments(shifted);
  for (std::size_t i = 0; i < a.mean.size(); ++i) {
    EXPECT_NEAR(b.mean[i], a.mean[i] + 7.25, 1e-12);
    EXPECT_NEAR(b.var[i], a.var[i], 1e-12);
  }
}

TEST(Ops, Conv1dChannels) {
  const Tensor v(Shape{1, 3}, {1, 2, 3});
  const std::vector<double> box{1, 1, 1}, delta{0, 1, 0}, zero{0, 0, 0};
  EXPECT_EQ(ops::conv1d_channels(v, box), Tensor(Shape{1, 3}, {3, 6, 5}));
  EXPECT_EQ(ops::conv1d_channels(v, delta), v);
  EXPECT_EQ(ops::conv1d_channels(v, zero), Tensor(Shape{1, 3}, {0, 0, 0}));
  const std::vector<double> even{1, 1};
  EXPECT_THROW(ops::conv1d_channels(v, even), ConfigError);
}

TEST(Ops, Dense) {
  EXPECT_EQ(ops::dense(Tensor(Shape{1, 2}, {1, 2}), Tensor(Shape{1, 2}, {3, 4}))[0], 11.0);
  const Tensor v = oracle::random_tensor(Shape{3, 4}, 5);
  Tensor eye(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  EXPECT_EQ(ops::dense(v, eye), v);
  const Tensor bias(Shape{2}, {0.5, -1.5});
  const Tensor out = ops::dense(v, Tensor(Shape{2, 4}), &bias);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out(i, 0), 0.5);
    EXPECT_EQ(out(i, 1), -1.5);
  }
  EXPECT_THROW(ops::dense(v, Tensor(Shape{2, 3})), ShapeError);
}

TEST(Ops, Conv2dHandValues) {
  const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(ops::conv2d(x, Tensor::full(Shape{1, 1, 2, 2}, 1.0), nullptr)[0], 10.0);

  // 1x1 identity weight copies channels.
  const Tensor y = oracle::random_tensor(Shape{2, 3, 5, 4}, 8);
  Tensor eye(Shape{3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i, 0, 0) = 1.0;
  EXPECT_EQ(ops::conv2d(y, eye, nullptr), y);

  // 3x3 averaging of a constant keeps the constant in the interior.
  const Tensor avg = ops::conv2d(Tensor::full(Shape{1, 1, 6, 6}, 2.5), Tensor::full(Shape{1, 1, 3, 3}, 1.0 / 9), nullptr);
  EXPECT_EQ(avg.shape(), (Shape{1, 1, 4, 4}));
  for (double v : avg.data()) EXPECT_NEAR(v, 2.5, 1e-14);
}

TEST(Ops, Conv2dDeltaKernelIsIdentityOnMatchedChannel) {
  const Tensor x = oracle::random_tensor(Shape{2, 3, 6, 5}, 21);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    Tensor w(Shape{1, 3, 3, 3});
    w(0, ch, 1, 1) = 1.0;
    const Tensor y = ops::conv2d(x, w, nullptr, 1, 1);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(y(n, 0, i, j), x(n, ch, i, j));
  }
}

TEST(Ops, Conv2dMatchesDirectLoops) {
  struct Case {
    Shape x, w;
    std::size_t stride, pad;
  };
  const std::vector<Case> cases{{{2, 3, 7, 6}, {4, 3, 3, 3}, 1, 1},
                                {{1, 2, 9, 9}, {3, 2, 3, 3}, 2, 1},
                                {{1, 1, 8, 5}, {2, 1, 2, 3}, 1, 0},
                                {{2, 2, 6, 6}, {1, 2, 1, 1}, 1, 2}};
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    const Tensor x = oracle::random_tensor(c.x, seed++), w = oracle::random_tensor(c.w, seed++);
    const Tensor bias = oracle::random_tensor(Shape{c.w[0]}, seed++);
    const Tensor got = ops::conv2d(x, w, &bias, c.stride, c.pad);
    const Tensor want = oracle::conv2d(x, w, &bias, c.stride, c.pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Ops, Conv2dErrors) {
  EXPECT_THROW(ops::conv2d(Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 3, 3}), nullptr, 2, 0), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 1, 3, 3}), nullptr), ShapeError);
}

TEST(Ops, Deterministic) {
  const Tensor x = oracle::random_tensor(Shape{2, 4, 8, 8}, 9), w = oracle::random_tensor(Shape{4, 4, 3, 3}, 10);
  EXPECT_EQ(ops::conv2d(x, w, nullptr, 1, 1), ops::conv2d(x, w, nullptr, 1, 1));
  EXPECT_EQ(ops::l2_normalize(ops::global_avg_pool(x)), ops::l2_normalize(ops::global_avg_pool(x)));
}

TEST(TensorIo, TenRoundTripAndLayout) {
  const Tensor t = oracle::random_tensor(Shape{2, 3, 4}, 1);
  const std::string bytes = io::encode_ten(t);
  ASSERT_EQ(bytes.size(), 4 + 4 + 3 * 8 + t.size() * 8);
  EXPECT_EQ(bytes.substr(0, 4), "TEN1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 3);  // rank, little-endian u32
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // first extent, little-endian u64
  EXPECT_EQ(io::decode_ten(bytes), t);

  const auto dir = oracle::temp_dir("ten");
  io::save_ten(dir / "t.ten", t);
  EXPECT_EQ(io::load_ten(dir / "t.ten"), t);
  EXPECT_THROW(io::load_ten(dir / "missing.ten"), IoError);
  EXPECT_THROW(io::decode_ten("TEN0xxxx"), IoError);
  EXPECT_THROW(io::decode_ten(bytes.substr(0, bytes.size() - 1)), IoError);
  std::filesystem::remove_all(dir);
}

TEST(TensorIo, Csv) {
  const Tensor t(Shape{2, 3}, {0.1, -2, 3e-20, 4, 5.5, 1.0 / 3});
  const Tensor back = io::from_csv(io::to_csv(t));
  EXPECT_EQ(back, t);
  EXPECT_EQ(io::to_csv(Tensor(Shape{3}, {1, 2, 3})), "1,2,3\n");
  EXPECT_THROW(io::to_csv(Tensor(Shape{1, 1, 1})), ShapeError);
  EXPECT_THROW(io::from_csv("1,2\n3\n"), IoError);
  EXPECT_THROW(io::from_csv("1,x\n"), IoError);
}
