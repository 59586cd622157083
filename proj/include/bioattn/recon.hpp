#pragma once

// Desk-scale undersampled MRI reconstruction: synthetic phantoms, Cartesian
// line masks, zero-filled inputs, and a small residual CNN with pluggable
// channel attention.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "bioattn/attention.hpp"
#include "bioattn/autodiff.hpp"
#include "bioattn/error.hpp"
#include "bioattn/fft.hpp"
#include "bioattn/metrics.hpp"
#include "bioattn/tensor.hpp"

namespace bioattn::recon {

using ad::Tape;
using ad::Var;
using attention::AttentionModule;
using attention::AttentionSpec;

// ---- phantoms ----------------------------------------------------------------

inline constexpr std::size_t kMinPhantomExtent = 32;

/// Random soft-edged ellipses inside a body ellipse, normalized to [0, 1].
inline Tensor make_phantom(std::size_t h, std::size_t w, std::uint64_t seed) {
  if (h < kMinPhantomExtent || w < kMinPhantomExtent) {
    throw ConfigError(fmt::format("phantom must be at least {0}x{0}, got {1}x{2}", kMinPhantomExtent, h, w));
  }
  std::mt19937_64 rng(seed);
  auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  struct Ellipse {
    double cx, cy, ax, ay, theta, value, softness;
  };
  std::vector<Ellipse> shapes;
  shapes.push_back({uni(-0.05, 0.05), uni(-0.05, 0.05), uni(0.70, 0.85), uni(0.60, 0.80), uni(-0.3, 0.3),
                    uni(0.35, 0.55), 0.04});
  const int inner = std::uniform_int_distribution<int>(4, 8)(rng);
  for (int k = 0; k < inner; ++k) {
    const double r = uni(0.0, 0.45), phi = uni(0.0, 2.0 * std::numbers::pi);
    shapes.push_back({r * std::cos(phi), r * std::sin(phi), uni(0.08, 0.30), uni(0.08, 0.30),
                      uni(0.0, std::numbers::pi), uni(-0.25, 0.5), uni(0.03, 0.10)});
  }
  // Smooth low-order intensity modulation (coil-shading-like).
  const double gx = uni(-0.15, 0.15), gy = uni(-0.15, 0.15);

  Tensor img(Shape{h, w});
  double peak = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    const double y = 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(h) - 1.0;
    for (std::size_t j = 0; j < w; ++j) {
      const double x = 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(w) - 1.0;
      double v = 0.0;
      for (const auto& e : shapes) {
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (dx * std::cos(e.theta) + dy * std::sin(e.theta)) / e.ax;
        const double t = (-dx * std::sin(e.theta) + dy * std::cos(e.theta)) / e.ay;
        const double d = std::sqrt(u * u + t * t);
        v += e.value * ops::sigmoid((1.0 - d) / e.softness);
      }
      v *= 1.0 + gx * x + gy * y;
      v = std::max(v, 0.0);
      img(i, j) = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0) {
    for (auto& v : img.data()) v /= peak;
  }
  return img;
}

// ---- k-space masks -----------------------------------------------------------

enum class MaskPattern { uniform_random_lines, equispaced_lines };

inline std::string_view to_string(MaskPattern p) {
  return p == MaskPattern::uniform_random_lines ? "uniform-random-lines" : "equispaced-lines";
}

inline MaskPattern parse_mask_pattern(std::string_view s) {
  if (s == "uniform-random-lines") return MaskPattern::uniform_random_lines;
  if (s == "equispaced-lines") return MaskPattern::equispaced_lines;
  throw ConfigError("unknown mask pattern '" + std::string(s) + "'");
}

/// Phase-encode lines are image rows; the mask is laid out in centered k-space
/// (zero frequency at row H/2).
struct MaskSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  double acceleration = 4.0;
  std::size_t acs_lines = 8;
  std::uint64_t seed = 0;
  MaskPattern pattern = MaskPattern::uniform_random_lines;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("mask: extents must be positive");
    if (!(acceleration >= 1.0)) throw ConfigError("mask: acceleration must be >= 1");
    if (acs_lines > height) throw ConfigError("mask: more ACS lines than rows");
  }

  std::size_t target_lines() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(height) / acceleration));
  }
  std::size_t acs_begin() const { return height / 2 - acs_lines / 2; }
};

inline Tensor make_mask(const MaskSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height;
  std::vector<bool> rows(h, false);
  for (std::size_t i = 0; i < spec.acs_lines; ++i) rows[spec.acs_begin() + i] = true;

  if (spec.pattern == MaskPattern::uniform_random_lines) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < h; ++i)
      if (!rows[i]) candidates.push_back(i);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    const std::size_t want = spec.target_lines() > spec.acs_lines ? spec.target_lines() - spec.acs_lines : 0;
    for (std::size_t k = 0; k < std::min(want, candidates.size()); ++k) rows[candidates[k]] = true;
  } else {
    const double stride = spec.acceleration;
    const std::size_t count = spec.target_lines();
    for (std::size_t k = 0; k < count; ++k) {
      rows[static_cast<std::size_t>(std::floor(static_cast<double>(k) * stride)) % h] = true;
    }
  }

  Tensor mask(Shape{h, spec.width});
  for (std::size_t i = 0; i < h; ++i) {
    if (!rows[i]) continue;
    for (std::size_t j = 0; j < spec.width; ++j) mask(i, j) = 1.0;
  }
  return mask;
}

/// Number of fully sampled rows.
inline std::size_t sampled_lines(const Tensor& mask) {
  require_rank(mask, 2, "sampled_lines");
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.extent(0); ++i) {
    if (mask(i, std::size_t{0}) != 0.0) ++n;
  }
  return n;
}

struct Undersampled {
  fft::ComplexImage kspace;  // centered, masked
  Tensor zero_filled;        // |ifft2(kspace)|
};

inline Undersampled undersample(const Tensor& image, const Tensor& mask) {
  require_rank(image, 2, "undersample image");
  require_same_shape(image, mask, "undersample");
  auto k = fft::fftshift(fft::fft2(fft::ComplexImage::from_real(image)));
  for (std::size_t i = 0; i < k.data.size(); ++i) k.data[i] *= mask[i];
  auto zf = fft::ifft2(fft::ifftshift(k)).magnitude();
  return {std::move(k), std::move(zf)};
}

// ---- network -----------------------------------------------------------------

struct NetworkConfig {
  std::vector<std::size_t> channels{16, 16};  // one entry per conv/relu/attention stage
  AttentionSpec attention = attention::IdentityConfig{};
  /// Standard deviation multiplier for the output conv, relative to He init.
  double output_init_scale = 0.1;

  void validate() const {
    if (channels.empty()) throw ConfigError("network: channel plan must not be empty");
    for (auto c : channels)
      if (c == 0) throw ConfigError("network: channel widths must be positive");
  }
};

struct ConvLayer {
  Tensor weight;  // F x C x 3 x 3
  Tensor bias;    // F
};

/// Residual stack: [conv3x3 -> relu -> attention] x depth -> conv3x3, added to the input.
class ReconNetwork {
 public:
  struct Bound {
    std::vector<Var> weights;
    std::vector<Var> biases;
    std::vector<attention::BoundWeights> attention;
  };

  static ReconNetwork build(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ReconNetwork net;
    std::size_t in = 1;
    auto conv = [&rng](std::size_t f, std::size_t c, double scale) {
      std::normal_distribution<double> dist(0.0, scale * std::sqrt(2.0 / static_cast<double>(c * 9)));
      ConvLayer layer{Tensor(Shape{f, c, 3, 3}), Tensor(Shape{f})};
      for (auto& v : layer.weight.data()) v = dist(rng);
      return layer;
    };
    for (std::size_t stage = 0; stage < cfg.channels.size(); ++stage) {
      const std::size_t c = cfg.channels[stage];
      net.convs_.push_back(conv(c, in, 1.0));
      net.attention_.push_back(AttentionModule::create(cfg.attention, c, rng()));
      in = c;
    }
    net.convs_.push_back(conv(1, in, cfg.output_init_scale));
    return net;
  }

  std::size_t depth() const { return attention_.size(); }
  const std::vector<ConvLayer>& convs() const { return convs_; }
  const std::vector<AttentionModule>& attention() const { return attention_; }

  std::size_t conv_param_count() const {
    std::size_t n = 0;
    for (const auto& l : convs_) n += l.weight.size() + l.bias.size();
    return n;
  }

  std::size_t attention_param_count() const {
    std::size_t n = 0;
    for (const auto& a : attention_) n += a.param_count();
    return n;
  }

  std::size_t param_count() const { return conv_param_count() + attention_param_count(); }

  Bound bind(Tape& tape) const {
    Bound b;
    for (const auto& l : convs_) {
      b.weights.push_back(tape.leaf(l.weight));
      b.biases.push_back(tape.leaf(l.bias));
    }
    for (const auto& a : attention_) b.attention.push_back(a.bind(tape));
    return b;
  }

  /// input: N x 1 x H x W zero-filled magnitudes.
  Var forward(const Var& input, const Bound& b) const {
    const auto g = ops::nchw(input.value(), "network input");
    if (g.c != 1) throw ShapeError("network expects single-channel input");
    Var h = input;
    for (std::size_t s = 0; s < depth(); ++s) {
      h = ad::relu(ad::conv2d(h, b.weights[s], b.biases[s], 1, 1));
      h = attention_[s].forward(h, b.attention[s]).output;
    }
    Var residual = ad::conv2d(h, b.weights.back(), b.biases.back(), 1, 1);
    return ad::add(input, residual);
  }

  Tensor predict(const Tensor& input) const {
    Tape tape;
    return forward(tape.leaf(input), bind(tape)).value();
  }

  /// Flat parameter list: conv weights and biases per layer, then attention weights.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : convs_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    for (const auto& a : attention_)
      for (const auto& [_, t] : a.weights()) out.push_back(t);
    return out;
  }

  std::vector<Var> flatten(const Bound& b) const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      out.push_back(b.weights[i]);
      out.push_back(b.biases[i]);
    }
    for (const auto& m : b.attention)
      for (const auto& [_, v] : m) out.push_back(v);
    return out;
  }

  void set_parameters(const std::vector<Tensor>& params) {
    std::size_t k = 0;
    auto next = [&]() -> const Tensor& {
      if (k >= params.size()) throw ContractError("set_parameters: too few tensors");
      return params[k++];
    };
    for (auto& l : convs_) {
      const Tensor& w = next();
      require_same_shape(l.weight, w, "set_parameters");
      l.weight = w;
      const Tensor& bias = next();
      require_same_shape(l.bias, bias, "set_parameters");
      l.bias = bias;
    }
    for (auto& a : attention_) {
      std::vector<std::string> names;
      for (const auto& [name, _] : a.weights()) names.push_back(name);
      for (const auto& name : names) a.set_weight(name, next());
    }
    if (k != params.size()) throw ContractError("set_parameters: too many tensors");
  }

 private:
  std::vector<ConvLayer> convs_;
  std::vector<AttentionModule> attention_;
};

// ---- data and training -----------------------------------------------------------

/// Paired N x 1 x H x W tensors.
struct Dataset {
  Tensor inputs;   // zero-filled
  Tensor targets;  // ground truth

  std::size_t size() const { return inputs.extent(0); }

  Tensor image(const Tensor& batch, std::size_t i) const {
    const std::size_t h = batch.extent(2), w = batch.extent(3);
    std::vector<double> px(batch.data().begin() + static_cast<std::ptrdiff_t>(i * h * w),
                           batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w));
    return Tensor(Shape{h, w}, std::move(px));
  }

  std::pair<Tensor, Tensor> batch(std::span<const std::size_t> indices) const {
    const std::size_t h = inputs.extent(2), w = inputs.extent(3), hw = h * w;
    Tensor x(Shape{indices.size(), 1, h, w}), y(Shape{indices.size(), 1, h, w});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * hw), hw,
                  x.data().begin() + static_cast<std::ptrdiff_t>(k * hw));
      std::copy_n(targets.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * hw), hw,
                  y.data().begin() + static_cast<std::ptrdiff_t>(k * hw));
    }
    return {std::move(x), std::move(y)};
  }
};

/// Phantoms with seeds first_seed, first_seed+1, ... undersampled with one shared mask.
inline Dataset make_dataset(std::size_t count, std::size_t size, std::uint64_t first_seed, const Tensor& mask) {
  if (count == 0) throw ConfigError("dataset must hold at least one image");
  const std::size_t hw = size * size;
  Dataset d{Tensor(Shape{count, 1, size, size}), Tensor(Shape{count, 1, size, size})};
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor truth = make_phantom(size, size, first_seed + i);
    const Tensor zf = undersample(truth, mask).zero_filled;
    std::copy(truth.data().begin(), truth.data().end(), d.targets.data().begin() + static_cast<std::ptrdiff_t>(i * hw));
    std::copy(zf.data().begin(), zf.data().end(), d.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * hw));
  }
  return d;
}

enum class OptimizerKind { sgd, rmsprop };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.1;
  std::size_t steps = 200;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double rms_decay = 0.9;
  double rms_eps = 1e-8;
  /// Abort when a batch loss exceeds this multiple of the first one.
  double divergence_factor = 1e3;
};

struct TrainResult {
  std::vector<double> loss_history;  // batch loss before each update
};

inline TrainResult train(ReconNetwork& net, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (!(cfg.learning_rate >= 0)) throw ConfigError("train: learning rate must be nonnegative");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<Tensor> params = net.parameters();
  std::vector<Tensor> sq_avg;
  if (cfg.optimizer == OptimizerKind::rmsprop)
    for (const auto& p : params) sq_avg.push_back(Tensor::zeros_like(p));

  TrainResult result;
  result.loss_history.reserve(cfg.steps);
  std::vector<std::size_t> idx;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    idx.clear();
    while (idx.size() < std::min(cfg.batch_size, data.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto [x, y] = data.batch(idx);
    Tape tape;
    const auto bound = net.bind(tape);
    Var loss = ad::mse_loss(net.forward(tape.leaf(x), bound), tape.leaf(y));
    const double l = loss.value().item();
    if (!std::isfinite(l) || (!result.loss_history.empty() && l > cfg.divergence_factor * result.loss_history.front())) {
      throw DivergenceError(fmt::format("training diverged at step {}: loss {} (initial {})", step, l,
                                        result.loss_history.empty() ? l : result.loss_history.front()));
    }
    result.loss_history.push_back(l);
    tape.backward(loss);
    const auto vars = net.flatten(bound);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor& g = vars[k].grad();
      Tensor& p = params[k];
      if (cfg.optimizer == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= cfg.learning_rate * g[i];
      } else {
        Tensor& s = sq_avg[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          s[i] = cfg.rms_decay * s[i] + (1.0 - cfg.rms_decay) * g[i] * g[i];
          p[i] -= cfg.learning_rate * g[i] / (std::sqrt(s[i]) + cfg.rms_eps);
        }
      }
    }
    net.set_parameters(params);
  }
  return result;
}

/// Per-image metrics of `net` on `data`, ids "<prefix><index>".
inline std::vector<metrics::ImageMetrics> score_images(const Tensor& predictions, const Dataset& data,
                                                       const std::string& prefix) {
  std::vector<metrics::ImageMetrics> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows.push_back(metrics::evaluate_image(prefix + std::to_string(i), data.image(predictions, i),
                                           data.image(data.targets, i)));
  }
  return rows;
}

}  // namespace bioattn::recon
