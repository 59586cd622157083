#pragma once

// Forward kernels on plain tensors (NCHW). The differentiable wrappers in
// autodiff.hpp call these and add gradient rules.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "bioattn/error.hpp"
#include "bioattn/tensor.hpp"

namespace bioattn::ops {

/// Epsilon guarding the zero vector in l2_normalize.
inline constexpr double kL2NormEps = 1e-12;

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return out;
}

struct Nchw {
  std::size_t n, c, h, w;
};

inline Nchw nchw(const Tensor& x, const char* what) {
  require_rank(x, 4, what);
  return {x.extent(0), x.extent(1), x.extent(2), x.extent(3)};
}

inline Tensor global_avg_pool(const Tensor& x) {
  const auto [n, c, h, w] = nchw(x, "global_avg_pool");
  const std::size_t hw = h * w;
  Tensor out(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return out;
}

/// Repeats each (n, c) value over an h x w plane.
inline Tensor broadcast_spatial(const Tensor& v, std::size_t h, std::size_t w) {
  require_rank(v, 2, "broadcast_spatial");
  const std::size_t nc = v.size(), hw = h * w;
  Tensor out(Shape{v.extent(0), v.extent(1), h, w});
  for (std::size_t i = 0; i < nc; ++i) {
    std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>(i * hw), hw, v[i]);
  }
  return out;
}

/// Per-sample normalization across the channel axis: v / (||v|| + eps).
inline Tensor l2_normalize(const Tensor& v, double eps = kL2NormEps) {
  require_rank(v, 2, "l2_normalize");
  if (!(eps > 0)) throw ConfigError("l2_normalize: eps must be positive");
  const std::size_t n = v.extent(0), c = v.extent(1);
  Tensor out(v.shape());
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += v[i * c + j] * v[i * c + j];
    const double denom = std::sqrt(ss) + eps;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v[i * c + j] / denom;
  }
  return out;
}

struct Moments {
  Tensor mean;
  Tensor var;
};

/// Per-channel spatial mean and variance (denominator H*W - 1).
inline Moments spatial_moments(const Tensor& x) {
  const auto [n, c, h, w] = nchw(x, "spatial_moments");
  const std::size_t hw = h * w;
  if (hw < 2) throw ShapeError("spatial_moments: need at least two spatial positions");
  Tensor mean(Shape{n, c}), var(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    const double mu = s / static_cast<double>(hw);
    double ss = 0.0;
    for (std::size_t j = 0; j < hw; ++j) {
      const double d = x[i * hw + j] - mu;
      ss += d * d;
    }
    mean[i] = mu;
    var[i] = ss / static_cast<double>(hw - 1);
  }
  return {std::move(mean), std::move(var)};
}

/// Zero-padded 1-D correlation along the channel axis; output keeps C.
inline Tensor conv1d_channels(const Tensor& v, std::span<const double> kernel) {
  require_rank(v, 2, "conv1d_channels");
  const std::size_t k = kernel.size();
  if (k == 0 || k % 2 == 0) throw ConfigError("conv1d_channels: kernel size must be odd, got " + std::to_string(k));
  const std::size_t n = v.extent(0), c = v.extent(1);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  Tensor out(v.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(ch) + static_cast<std::ptrdiff_t>(j) - half;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(c)) s += kernel[j] * v[i * c + static_cast<std::size_t>(src)];
      }
      out[i * c + ch] = s;
    }
  }
  return out;
}

/// out = v * W^T + bias, with v: N x C, W: M x C, bias: M.
inline Tensor dense(const Tensor& v, const Tensor& weight, const Tensor* bias = nullptr) {
  require_rank(v, 2, "dense input");
  require_rank(weight, 2, "dense weight");
  const std::size_t n = v.extent(0), c = v.extent(1), m = weight.extent(0);
  if (weight.extent(1) != c) {
    throw ShapeError("dense: weight " + shape_string(weight.shape()) + " incompatible with input " +
                     shape_string(v.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->extent(0) != m)) throw ShapeError("dense: bias must have shape [M]");
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < m; ++o) {
      double s = bias ? (*bias)[o] : 0.0;
      for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] * weight[o * c + j];
      out[i * m + o] = s;
    }
  }
  return out;
}

struct Conv2dGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t f, kh, kw;       // filters
  std::size_t stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_plane() const { return out_h * out_w; }
};

inline Conv2dGeometry conv2d_geometry(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t pad) {
  const auto [n, c, h, w] = nchw(x, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.extent(1) != c) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " does not match input channels " +
                     std::to_string(c));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  Conv2dGeometry g{n, c, h, w, weight.extent(0), weight.extent(2), weight.extent(3), stride, pad, 0, 0};
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  if (ph < g.kh || pw < g.kw || (ph - g.kh) % stride != 0 || (pw - g.kw) % stride != 0) {
    throw ShapeError("conv2d: non-integral output extent for input " + shape_string(x.shape()) + ", kernel " +
                     std::to_string(g.kh) + "x" + std::to_string(g.kw) + ", stride " + std::to_string(stride) +
                     ", pad " + std::to_string(pad));
  }
  g.out_h = (ph - g.kh) / stride + 1;
  g.out_w = (pw - g.kw) / stride + 1;
  return g;
}

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Output columns [lo, hi) whose input column oj*stride + k - pad lies inside [0, w).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                       std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + k < pad + in) ++hi;
  return {lo, hi};
}

// cols: (C*kh*kw) x (out_h*out_w) for one sample.
inline void im2col(const Conv2dGeometry& g, const double* x, RowMatrix& cols) {
  cols.resize(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.out_plane()));
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    const double* plane = x + ch * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [rlo, rhi] = valid_range(g.out_h, g.h, ki, g.stride, g.pad);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [clo, chi] = valid_range(g.out_w, g.w, kj, g.stride, g.pad);
        double* row = cols.data() + ((ch * g.kh + ki) * g.kw + kj) * g.out_plane();
        std::fill_n(row, g.out_plane(), 0.0);
        for (std::size_t oi = rlo; oi < rhi; ++oi) {
          const double* src = plane + (oi * g.stride + ki - g.pad) * g.w;
          double* dst = row + oi * g.out_w;
          for (std::size_t oj = clo; oj < chi; ++oj) dst[oj] = src[oj * g.stride + kj - g.pad];
        }
      }
    }
  }
}

inline void col2im_add(const Conv2dGeometry& g, const RowMatrix& cols, double* dx) {
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    double* plane = dx + ch * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [rlo, rhi] = valid_range(g.out_h, g.h, ki, g.stride, g.pad);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [clo, chi] = valid_range(g.out_w, g.w, kj, g.stride, g.pad);
        const double* row = cols.data() + ((ch * g.kh + ki) * g.kw + kj) * g.out_plane();
        for (std::size_t oi = rlo; oi < rhi; ++oi) {
          double* dst = plane + (oi * g.stride + ki - g.pad) * g.w;
          const double* src = row + oi * g.out_w;
          for (std::size_t oj = clo; oj < chi; ++oj) dst[oj * g.stride + kj - g.pad] += src[oj];
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation with zero padding. weight: F x C x kh x kw, bias: F (optional).
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, std::size_t stride = 1,
                     std::size_t pad = 0) {
  const auto g = conv2d_geometry(x, weight, stride, pad);
  if (bias && (bias->rank() != 1 || bias->extent(0) != g.f)) throw ShapeError("conv2d: bias must have shape [F]");
  Tensor out(Shape{g.n, g.f, g.out_h, g.out_w});
  const auto fi = static_cast<Eigen::Index>(g.f);
  const auto pi = static_cast<Eigen::Index>(g.patch());
  const auto oi = static_cast<Eigen::Index>(g.out_plane());
  detail::ConstMatrixMap wmat(weight.data().data(), fi, pi);
  detail::RowMatrix cols;
  for (std::size_t s = 0; s < g.n; ++s) {
    detail::im2col(g, x.data().data() + s * g.c * g.h * g.w, cols);
    detail::MatrixMap y(out.data().data() + s * g.f * g.out_plane(), fi, oi);
    y.noalias() = wmat * cols;
    if (bias) {
      for (std::size_t f = 0; f < g.f; ++f) y.row(static_cast<Eigen::Index>(f)).array() += (*bias)[f];
    }
  }
  return out;
}

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, std::size_t stride,
                                   std::size_t pad) {
  const auto g = conv2d_geometry(x, weight, stride, pad);
  Conv2dGrads grads{Tensor::zeros_like(x), Tensor::zeros_like(weight), Tensor(Shape{g.f})};
  const auto fi = static_cast<Eigen::Index>(g.f);
  const auto pi = static_cast<Eigen::Index>(g.patch());
  const auto oi = static_cast<Eigen::Index>(g.out_plane());
  detail::ConstMatrixMap wmat(weight.data().data(), fi, pi);
  detail::MatrixMap dw(grads.weight.data().data(), fi, pi);
  detail::RowMatrix cols, dcols;
  for (std::size_t s = 0; s < g.n; ++s) {
    detail::ConstMatrixMap dy(grad_out.data().data() + s * g.f * g.out_plane(), fi, oi);
    detail::im2col(g, x.data().data() + s * g.c * g.h * g.w, cols);
    dw.noalias() += dy * cols.transpose();
    dcols.noalias() = wmat.transpose() * dy;
    detail::col2im_add(g, dcols, grads.input.data().data() + s * g.c * g.h * g.w);
    for (std::size_t f = 0; f < g.f; ++f) grads.bias[f] += dy.row(static_cast<Eigen::Index>(f)).sum();
  }
  return grads;
}

}  // namespace bioattn::ops
