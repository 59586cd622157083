#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape records every differentiable operation in creation order, so node
// inputs always precede the node. backward() walks the record in reverse.
// One tape serves one forward/backward pass; use independent tapes for
// concurrent work.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "bioattn/error.hpp"
#include "bioattn/ops.hpp"
#include "bioattn/tensor.hpp"

namespace bioattn::ad {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const {
    if (!tape_) throw ContractError("Var is not attached to a tape");
    return *tape_;
  }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the node's own forward value and the gradient flowing into it.
using BackwardFn = std::function<void(Tape&, const Tensor& out_value, const Tensor& grad_out)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value) { return push(std::move(value), nullptr); }

  Var record(Tensor value, BackwardFn backward) { return push(std::move(value), std::move(backward)); }

  std::size_t size() const noexcept { return nodes_.size(); }

  const Tensor& value(const Var& v) const { return node(v).value; }

  const Tensor& grad(const Var& v) const {
    if (!has_grads_) throw ContractError("gradients requested before backward()");
    return node(v).grad;
  }

  /// Seeds d(output)/d(output) = 1 and propagates to every earlier node.
  /// Nodes that do not reach `output` end with zero gradients.
  void backward(const Var& output) {
    const auto& out = node(output);
    if (out.value.size() != 1) {
      throw ContractError("backward() needs a scalar output, got shape " + shape_string(out.value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor::zeros_like(n.value);
    has_grads_ = true;
    nodes_[output.id()].grad[0] = 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward) continue;
      const bool any = std::any_of(n.grad.data().begin(), n.grad.data().end(), [](double g) { return g != 0.0; });
      if (any) n.backward(*this, n.value, n.grad);
    }
  }

  /// Adds `g` into the gradient accumulator of `v`. Only valid during backward().
  void accumulate(const Var& v, const Tensor& g) {
    auto& n = node(v);
    require_same_shape(n.grad, g, "gradient accumulation");
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  void check_owned(const Var& v) const {
    if (&v.tape() != this) throw ContractError("Var belongs to a different tape");
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
  };

  Var push(Tensor value, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(backward)});
    has_grads_ = false;
    return Var(this, nodes_.size() - 1);
  }

  const Node& node(const Var& v) const {
    check_owned(v);
    return nodes_.at(v.id());
  }
  Node& node(const Var& v) {
    check_owned(v);
    return nodes_.at(v.id());
  }

  // deque: references to values stay valid while new nodes are appended.
  std::deque<Node> nodes_;
  bool has_grads_ = false;
};

inline const Tensor& Var::value() const { return tape().value(*this); }
inline const Tensor& Var::grad() const { return tape().grad(*this); }

namespace detail {

inline Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  t.check_owned(b);
  return t;
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return a.tape().record(std::move(y), [a, deriv](Tape& t, const Tensor& out, const Tensor& g) {
    const Tensor& x = a.value();
    Tensor dx = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = g[i] * deriv(x[i], out[i]);
    t.accumulate(a, dx);
  });
}

}  // namespace detail

// ---- elementwise ---------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return t.record(std::move(y), [a, b](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return t.record(std::move(y), [a, b](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g);
    Tensor ng = g;
    for (auto& v : ng.data()) v = -v;
    t.accumulate(b, ng);
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return t.record(std::move(y), [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor da = g, db = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] *= bv[i];
      db[i] *= av[i];
    }
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

inline Var div(const Var& a, const Var& b) {
  Tape& t = detail::common_tape(a, b);
  require_same_shape(a.value(), b.value(), "div");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  return t.record(std::move(y), [a, b](Tape& t, const Tensor& out, const Tensor& g) {
    const Tensor& bv = b.value();
    Tensor da = g, db = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] = g[i] / bv[i];
      db[i] = -g[i] * out[i] / bv[i];
    }
    t.accumulate(a, da);
    t.accumulate(b, db);
  });
}

inline Var add_scalar(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var scale(const Var& a, double s) {
  return detail::unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return ops::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Square root; the derivative at 0 is taken as 0 so constant inputs stay finite.
inline Var sqrt(const Var& a) {
  for (double v : a.value().data()) {
    if (v < 0) throw DomainError("sqrt of negative value");
  }
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

inline Var pow_scalar(const Var& a, double p) {
  return detail::unary(
      a, [p](double x) { return std::pow(x, p); }, [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

/// max(a, floor); gradient passes only where a > floor.
inline Var clamp_min(const Var& a, double floor) {
  return detail::unary(
      a, [floor](double x) { return x > floor ? x : floor; }, [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions ----------------------------------------------------------

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Tensor::scalar(s), [a](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, Tensor::full(a.shape(), g[0]));
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var mse_loss(const Var& prediction, const Var& target) { return mean(square(sub(prediction, target))); }

// ---- channel machinery ---------------------------------------------------

inline Var global_avg_pool(const Var& x) {
  const auto g = ops::nchw(x.value(), "global_avg_pool");
  return x.tape().record(ops::global_avg_pool(x.value()), [x, g](Tape& t, const Tensor&, const Tensor& grad) {
    Tensor dx = ops::broadcast_spatial(grad, g.h, g.w);
    const double inv = 1.0 / static_cast<double>(g.h * g.w);
    for (auto& v : dx.data()) v *= inv;
    t.accumulate(x, dx);
  });
}

/// N x C -> N x C x h x w by repetition.
inline Var broadcast_spatial(const Var& v, std::size_t h, std::size_t w) {
  return v.tape().record(ops::broadcast_spatial(v.value(), h, w), [v, h, w](Tape& t, const Tensor&, const Tensor& g) {
    const std::size_t hw = h * w;
    Tensor dv = Tensor::zeros_like(v.value());
    for (std::size_t i = 0; i < dv.size(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < hw; ++j) s += g[i * hw + j];
      dv[i] = s;
    }
    t.accumulate(v, dv);
  });
}

/// Y = X * a with the N x C gate broadcast over H, W.
inline Var channel_gate(const Var& x, const Var& gate) {
  const auto g = ops::nchw(x.value(), "channel_gate");
  if (gate.shape() != Shape{g.n, g.c}) {
    throw ShapeError("channel_gate: gate " + shape_string(gate.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  return mul(x, broadcast_spatial(gate, g.h, g.w));
}

inline Var l2_normalize(const Var& v, double eps = ops::kL2NormEps) {
  return v.tape().record(ops::l2_normalize(v.value(), eps), [v, eps](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = v.value();
    const std::size_t n = x.extent(0), c = x.extent(1);
    Tensor dx = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < n; ++i) {
      double ss = 0.0, gx = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        ss += x[i * c + j] * x[i * c + j];
        gx += g[i * c + j] * x[i * c + j];
      }
      const double r = std::sqrt(ss), s = r + eps;
      const double cross = r > 0 ? gx / (s * s * r) : 0.0;
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] = g[i * c + j] / s - cross * x[i * c + j];
    }
    t.accumulate(v, dx);
  });
}

/// Replaces each entry of an N x C tensor by the mean of its channel group
/// (G contiguous groups of C/G channels).
inline Var group_mean(const Var& v, std::size_t groups) {
  require_rank(v.value(), 2, "group_mean");
  const std::size_t n = v.value().extent(0), c = v.value().extent(1);
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_mean: " + std::to_string(groups) + " groups do not divide " + std::to_string(c) +
                      " channels");
  }
  const std::size_t gs = c / groups;
  auto reduce = [n, c, gs](const Tensor& in) {
    Tensor out = Tensor::zeros_like(in);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g0 = 0; g0 < c; g0 += gs) {
        double s = 0.0;
        for (std::size_t j = 0; j < gs; ++j) s += in[i * c + g0 + j];
        for (std::size_t j = 0; j < gs; ++j) out[i * c + g0 + j] = s / static_cast<double>(gs);
      }
    }
    return out;
  };
  // The operator is symmetric, so the adjoint is itself.
  return v.tape().record(reduce(v.value()),
                         [v, reduce](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(v, reduce(g)); });
}

struct MomentVars {
  Var mean;
  Var var;
};

inline MomentVars spatial_moments(const Var& x) {
  const auto g = ops::nchw(x.value(), "spatial_moments");
  const std::size_t hw = g.h * g.w;
  if (hw < 2) throw ShapeError("spatial_moments: need at least two spatial positions");
  Var mu = global_avg_pool(x);
  Var dev = sub(x, broadcast_spatial(mu, g.h, g.w));
  Var var = scale(global_avg_pool(square(dev)), static_cast<double>(hw) / static_cast<double>(hw - 1));
  return {mu, var};
}

inline Var conv1d_channels(const Var& v, const Var& kernel) {
  Tape& tp = detail::common_tape(v, kernel);
  require_rank(kernel.value(), 1, "conv1d_channels kernel");
  Tensor y = ops::conv1d_channels(v.value(), kernel.value().data());
  return tp.record(std::move(y), [v, kernel](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = v.value();
    const Tensor& k = kernel.value();
    const std::size_t n = x.extent(0), c = x.extent(1), ks = k.size();
    const auto half = static_cast<std::ptrdiff_t>(ks / 2);
    Tensor dx = Tensor::zeros_like(x), dk = Tensor::zeros_like(k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t j = 0; j < ks; ++j) {
          const auto src = static_cast<std::ptrdiff_t>(ch) + static_cast<std::ptrdiff_t>(j) - half;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(c)) continue;
          const std::size_t s = i * c + static_cast<std::size_t>(src);
          dx[s] += k[j] * g[i * c + ch];
          dk[j] += x[s] * g[i * c + ch];
        }
      }
    }
    t.accumulate(v, dx);
    t.accumulate(kernel, dk);
  });
}

inline Var dense(const Var& v, const Var& weight, const std::optional<Var>& bias = std::nullopt) {
  Tape& tp = detail::common_tape(v, weight);
  if (bias) tp.check_owned(*bias);
  Tensor y = ops::dense(v.value(), weight.value(), bias ? &bias->value() : nullptr);
  return tp.record(std::move(y), [v, weight, bias](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = v.value();
    const Tensor& w = weight.value();
    const std::size_t n = x.extent(0), c = x.extent(1), m = w.extent(0);
    Tensor dx = Tensor::zeros_like(x), dw = Tensor::zeros_like(w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < m; ++o) {
        const double go = g[i * m + o];
        for (std::size_t j = 0; j < c; ++j) {
          dx[i * c + j] += go * w[o * c + j];
          dw[o * c + j] += go * x[i * c + j];
        }
      }
    }
    t.accumulate(v, dx);
    t.accumulate(weight, dw);
    if (bias) {
      Tensor db = Tensor::zeros_like(bias->value());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < m; ++o) db[o] += g[i * m + o];
      t.accumulate(*bias, db);
    }
  });
}

inline Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, std::size_t stride = 1,
                  std::size_t pad = 0) {
  Tape& tp = detail::common_tape(x, weight);
  if (bias) tp.check_owned(*bias);
  Tensor y = ops::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, stride, pad);
  return tp.record(std::move(y), [x, weight, bias, stride, pad](Tape& t, const Tensor&, const Tensor& g) {
    auto grads = ops::conv2d_backward(x.value(), weight.value(), g, stride, pad);
    t.accumulate(x, grads.input);
    t.accumulate(weight, grads.weight);
    if (bias) t.accumulate(*bias, grads.bias);
  });
}

// ---- gradient checking ---------------------------------------------------

using ScalarFn = std::function<Var(Tape&, const Var&)>;
using MultiScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// When nonzero, checks at most this many coordinates per input, sampled with `seed`.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

/// Max over checked coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|),
/// with central differences of width `step`.
inline double grad_check(const MultiScalarFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0)) throw ConfigError("grad_check: step must be positive");
  auto evaluate = [&f](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(tape.leaf(x));
    return f(tape, vars).value().item();
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x));
    Var out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  std::mt19937_64 rng(opt.seed);
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords && coords.size() > opt.max_coords) {
      std::vector<std::size_t> picked;
      std::sample(coords.begin(), coords.end(), std::back_inserter(picked), opt.max_coords, rng);
      coords = std::move(picked);
    }
    for (auto i : coords) {
      const double orig = probe[k][i];
      probe[k][i] = orig + opt.step;
      const double up = evaluate(probe);
      probe[k][i] = orig - opt.step;
      const double down = evaluate(probe);
      probe[k][i] = orig;
      const double fd = (up - down) / (2.0 * opt.step);
      const double ad = analytic[k][i];
      const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5) {
  GradCheckOptions opt;
  opt.step = step;
  return grad_check([&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); }, std::vector<Tensor>{x}, opt);
}

}  // namespace bioattn::ad
