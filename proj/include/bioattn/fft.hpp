#pragma once

// Radix-2 FFT with unitary scaling, plus the centered-spectrum shifts used
// for k-space masks.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "bioattn/error.hpp"
#include "bioattn/tensor.hpp"

namespace bioattn::fft {

using Complex = std::complex<double>;

/// Row-major H x W complex image.
struct ComplexImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Complex> data;

  ComplexImage() = default;
  ComplexImage(std::size_t h, std::size_t w) : height(h), width(w), data(h * w) {}

  Complex& operator()(std::size_t i, std::size_t j) { return data[i * width + j]; }
  const Complex& operator()(std::size_t i, std::size_t j) const { return data[i * width + j]; }

  static ComplexImage from_real(const Tensor& t) {
    require_rank(t, 2, "complex image");
    ComplexImage c(t.extent(0), t.extent(1));
    for (std::size_t i = 0; i < t.size(); ++i) c.data[i] = t[i];
    return c;
  }

  Tensor magnitude() const {
    Tensor t(Shape{height, width});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = std::abs(data[i]);
    return t;
  }

  Tensor real() const {
    Tensor t(Shape{height, width});
    for (std::size_t i = 0; i < data.size(); ++i) t[i] = data[i].real();
    return t;
  }

  double energy() const {
    double e = 0.0;
    for (const auto& v : data) e += std::norm(v);
    return e;
  }
};

inline bool is_power_of_two(std::size_t n) { return n && (n & (n - 1)) == 0; }

/// In-place iterative Cooley-Tukey; `inverse` flips the twiddle sign. No scaling.
inline void fft1d(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw ShapeError("fft: length " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const Complex w = std::polar(1.0, ang * static_cast<double>(k));
        const Complex u = a[i + k];
        const Complex v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

namespace detail {

inline ComplexImage transform2d(ComplexImage x, bool inverse) {
  if (!is_power_of_two(x.height) || !is_power_of_two(x.width)) {
    throw ShapeError("fft2: extents " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                     " are not powers of two");
  }
  std::vector<Complex> line(x.width);
  for (std::size_t i = 0; i < x.height; ++i) {
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(i * x.width), x.width, line.begin());
    fft1d(line, inverse);
    std::copy(line.begin(), line.end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * x.width));
  }
  line.resize(x.height);
  for (std::size_t j = 0; j < x.width; ++j) {
    for (std::size_t i = 0; i < x.height; ++i) line[i] = x(i, j);
    fft1d(line, inverse);
    for (std::size_t i = 0; i < x.height; ++i) x(i, j) = line[i];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.height * x.width));
  for (auto& v : x.data) v *= scale;
  return x;
}

}  // namespace detail

inline ComplexImage fft2(const ComplexImage& x) { return detail::transform2d(x, false); }
inline ComplexImage ifft2(const ComplexImage& x) { return detail::transform2d(x, true); }

/// Moves the zero frequency to (H/2, W/2). Extents are even, so fftshift == ifftshift.
inline ComplexImage fftshift(const ComplexImage& x) {
  ComplexImage out(x.height, x.width);
  for (std::size_t i = 0; i < x.height; ++i)
    for (std::size_t j = 0; j < x.width; ++j)
      out((i + x.height / 2) % x.height, (j + x.width / 2) % x.width) = x(i, j);
  return out;
}

inline ComplexImage ifftshift(const ComplexImage& x) { return fftshift(x); }

}  // namespace bioattn::fft
