#pragma once

// Slow, obviously-correct reference implementations used to freeze expected
// values. Nothing here shares code with the library.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bioattn/tensor.hpp"

namespace oracle {

using bioattn::Shape;
using bioattn::Tensor;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Direct 7-loop convolution with zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const std::size_t f = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{n, f, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = bias ? (*bias)[o] : 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long y = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                s += x(b, ch, y, xx) * w(o, ch, u, v);
              }
          out(b, o, i, j) = s;
        }
  return out;
}

/// O(N^4) unitary 2-D DFT.
inline std::vector<std::complex<double>> dft2(const std::vector<std::complex<double>>& x, std::size_t h,
                                              std::size_t w) {
  std::vector<std::complex<double>> out(h * w);
  const double pi = std::acos(-1.0);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t l = 0; l < w; ++l) {
      std::complex<double> s = 0.0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double ang = -2.0 * pi * (static_cast<double>(k * i) / h + static_cast<double>(l * j) / w);
          s += x[i * w + j] * std::polar(1.0, ang);
        }
      out[k * w + l] = s / std::sqrt(static_cast<double>(h * w));
    }
  return out;
}

struct SignedRankP {
  double w_plus;
  double p_two_sided;
  double p_greater;
};

/// Enumerates all 2^n sign assignments of the (tie-averaged) ranks of the
/// nonzero |x - y|.
inline SignedRankP wilcoxon_enumerate(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  const std::size_t n = d.size();
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++below;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    ranks[i] = below + (equal + 1.0) / 2.0;
  }
  double wp = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += ranks[i];
    if (d[i] > 0) wp += ranks[i];
  }
  const double wm = total - wp, stat = std::min(wp, wm);
  double le = 0, ge = 0;
  const std::uint64_t all = std::uint64_t{1} << n;
  for (std::uint64_t mask = 0; mask < all; ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += ranks[i];
    if (s <= stat + 1e-9) ++le;
    if (s >= wp - 1e-9) ++ge;
  }
  return {wp, std::min(1.0, 2.0 * le / static_cast<double>(all)), ge / static_cast<double>(all)};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("bioattn_" + tag + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
