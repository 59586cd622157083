#pragma once

// Channel attention modules on N x C x H x W feature maps.
//
// Every module computes a gate and returns X * gate. Parameter-free kinds
// (identity, bio, simam, gct) derive the gate from the input alone; eca, se
// and lct carry learnable weights.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "bioattn/autodiff.hpp"
#include "bioattn/error.hpp"
#include "bioattn/ops.hpp"
#include "bioattn/tensor.hpp"
#include "bioattn/tensor_io.hpp"

namespace bioattn::attention {

using ad::Tape;
using ad::Var;

enum class AttentionKind { identity, bio, simam, gct, eca, se, lct };

inline std::string_view to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::identity: return "identity";
    case AttentionKind::bio: return "bio";
    case AttentionKind::simam: return "simam";
    case AttentionKind::gct: return "gct";
    case AttentionKind::eca: return "eca";
    case AttentionKind::se: return "se";
    case AttentionKind::lct: return "lct";
  }
  return "unknown";
}

inline AttentionKind parse_kind(std::string_view name) {
  for (auto k : {AttentionKind::identity, AttentionKind::bio, AttentionKind::simam, AttentionKind::gct,
                 AttentionKind::eca, AttentionKind::se, AttentionKind::lct}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown attention kind '" + std::string(name) + "'");
}

enum class BioWiring {
  v1,  // N_t1 = l2norm(sigmoid(GAP)), N_t2 = sigmoid(GAP)
  v2,  // N_t1 = l2norm(GAP), N_t2 = sigmoid(GAP), base clamped at base_floor
};

struct IdentityConfig {};

struct BioConfig {
  double alpha = 2.0;
  double b = 2.0;
  double lambda = 1.0;
  BioWiring wiring = BioWiring::v1;
  double eps_norm = ops::kL2NormEps;
  double base_floor = 1e-3;

  void validate() const {
    auto pos = [](double v) { return std::isfinite(v) && v > 0; };
    if (!pos(alpha) || !pos(b) || !pos(lambda)) throw ConfigError("bio: alpha, b, lambda must be positive");
    if (!pos(eps_norm)) throw ConfigError("bio: eps_norm must be positive");
    if (!pos(base_floor)) throw ConfigError("bio: base_floor must be positive");
  }
};

struct SimamConfig {
  double lambda_e = 1e-4;
};

struct GctConfig {
  double c = 2.0;
  double eps = 1e-5;
};

struct EcaConfig {
  std::size_t k = 3;
};

struct SeConfig {
  std::size_t reduction = 16;
};

struct LctConfig {
  std::size_t groups = 1;
  double eps = 1e-5;
};

using AttentionSpec = std::variant<IdentityConfig, BioConfig, SimamConfig, GctConfig, EcaConfig, SeConfig, LctConfig>;

inline AttentionKind kind_of(const AttentionSpec& spec) {
  return std::visit(
      [](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, IdentityConfig>) return AttentionKind::identity;
        else if constexpr (std::is_same_v<T, BioConfig>) return AttentionKind::bio;
        else if constexpr (std::is_same_v<T, SimamConfig>) return AttentionKind::simam;
        else if constexpr (std::is_same_v<T, GctConfig>) return AttentionKind::gct;
        else if constexpr (std::is_same_v<T, EcaConfig>) return AttentionKind::eca;
        else if constexpr (std::is_same_v<T, SeConfig>) return AttentionKind::se;
        else return AttentionKind::lct;
      },
      spec);
}

inline AttentionSpec default_spec(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::identity: return IdentityConfig{};
    case AttentionKind::bio: return BioConfig{};
    case AttentionKind::simam: return SimamConfig{};
    case AttentionKind::gct: return GctConfig{};
    case AttentionKind::eca: return EcaConfig{};
    case AttentionKind::se: return SeConfig{};
    case AttentionKind::lct: return LctConfig{};
  }
  throw ConfigError("unknown attention kind");
}

// ---- differentiable forwards ---------------------------------------------

struct Gated {
  Var output;
  Var gate;  // N x C, or N x C x H x W for simam
};

inline Gated bio_attention(const Var& x, const BioConfig& cfg) {
  cfg.validate();
  ops::nchw(x.value(), "bio_attention");
  Var s = ad::global_avg_pool(x);
  Var t = ad::sigmoid(s);
  Var n1 = cfg.wiring == BioWiring::v1 ? ad::l2_normalize(t, cfg.eps_norm) : ad::l2_normalize(s, cfg.eps_norm);
  Var base = ad::add_scalar(ad::scale(n1, cfg.alpha), 1.0);
  if (cfg.wiring == BioWiring::v2) base = ad::clamp_min(base, cfg.base_floor);
  Var gate = ad::scale(ad::mul(ad::pow_scalar(base, -cfg.b), t), cfg.lambda);
  return {ad::channel_gate(x, gate), gate};
}

inline Gated simam_attention(const Var& x, const SimamConfig& cfg = {}) {
  const auto g = ops::nchw(x.value(), "simam_attention");
  if (!(cfg.lambda_e > 0)) throw ConfigError("simam: lambda_e must be positive");
  auto [mu, var] = ad::spatial_moments(x);
  Var dev2 = ad::square(ad::sub(x, ad::broadcast_spatial(mu, g.h, g.w)));
  Var denom = ad::scale(ad::add_scalar(var, cfg.lambda_e), 4.0);
  Var energy = ad::add_scalar(ad::div(dev2, ad::broadcast_spatial(denom, g.h, g.w)), 0.5);
  Var gate = ad::sigmoid(energy);
  return {ad::mul(x, gate), gate};
}

namespace detail {

// (z - group mean) / f(group variance), where f is sqrt(var)+eps or sqrt(var+eps).
inline Var group_standardize(const Var& z, std::size_t groups, double eps, bool eps_inside_sqrt) {
  Var centered = ad::sub(z, ad::group_mean(z, groups));
  Var var = ad::group_mean(ad::square(centered), groups);
  Var denom = eps_inside_sqrt ? ad::sqrt(ad::add_scalar(var, eps)) : ad::add_scalar(ad::sqrt(var), eps);
  return ad::div(centered, denom);
}

}  // namespace detail

inline Gated gct_attention(const Var& x, const GctConfig& cfg = {}) {
  const auto g = ops::nchw(x.value(), "gct_attention");
  if (g.c < 2) throw ShapeError("gct_attention: needs at least two channels");
  if (!(cfg.c > 0)) throw ConfigError("gct: c must be positive");
  Var zhat = detail::group_standardize(ad::global_avg_pool(x), 1, cfg.eps, false);
  Var gate = ad::exp(ad::scale(ad::square(zhat), -1.0 / (2.0 * cfg.c * cfg.c)));
  return {ad::channel_gate(x, gate), gate};
}

inline Gated eca_attention(const Var& x, const Var& kernel) {
  ops::nchw(x.value(), "eca_attention");
  Var gate = ad::sigmoid(ad::conv1d_channels(ad::global_avg_pool(x), kernel));
  return {ad::channel_gate(x, gate), gate};
}

inline void check_se_weights(std::size_t c, const Tensor& w1, const Tensor& w2) {
  require_rank(w1, 2, "se w1");
  require_rank(w2, 2, "se w2");
  const std::size_t hidden = w1.extent(0);
  if (w1.extent(1) != c || w2.extent(0) != c || w2.extent(1) != hidden) {
    throw ShapeError("se: weights " + shape_string(w1.shape()) + ", " + shape_string(w2.shape()) +
                     " do not fit " + std::to_string(c) + " channels");
  }
  if (c % hidden != 0) throw ConfigError("se: hidden width does not divide channel count");
}

inline Gated se_attention(const Var& x, const Var& w1, const Var& w2) {
  const auto g = ops::nchw(x.value(), "se_attention");
  check_se_weights(g.c, w1.value(), w2.value());
  Var hidden = ad::relu(ad::dense(ad::global_avg_pool(x), w1));
  Var gate = ad::sigmoid(ad::dense(hidden, w2));
  return {ad::channel_gate(x, gate), gate};
}

inline Gated lct_attention(const Var& x, const Var& w, const Var& beta, const LctConfig& cfg) {
  const auto g = ops::nchw(x.value(), "lct_attention");
  if (cfg.groups == 0 || g.c % cfg.groups != 0) {
    throw ConfigError("lct: " + std::to_string(cfg.groups) + " groups do not divide " + std::to_string(g.c) +
                      " channels");
  }
  if (w.shape() != Shape{g.c} || beta.shape() != Shape{g.c}) throw ShapeError("lct: w and beta must have shape [C]");
  const std::size_t n = g.n;
  Var zhat = detail::group_standardize(ad::global_avg_pool(x), cfg.groups, cfg.eps, true);
  // Per-channel affine: broadcast w, beta over the batch.
  auto rows = [n, &x](const Var& v) {
    Tensor tiled(Shape{n, v.value().size()});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(v.value().data().begin(), v.value().data().end(), tiled.data().begin() + static_cast<std::ptrdiff_t>(i * v.value().size()));
    return x.tape().record(std::move(tiled), [v, n](Tape& t, const Tensor&, const Tensor& grad) {
      const std::size_t c = v.value().size();
      Tensor dv = Tensor::zeros_like(v.value());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) dv[j] += grad[i * c + j];
      t.accumulate(v, dv);
    });
  };
  Var gate = ad::sigmoid(ad::add(ad::mul(rows(w), zhat), rows(beta)));
  return {ad::channel_gate(x, gate), gate};
}

// ---- parameter accounting ------------------------------------------------

/// Learnable parameters one block adds at channel width `c`.
inline std::size_t block_param_count(const AttentionSpec& spec, std::size_t c) {
  return std::visit(
      [c](const auto& cfg) -> std::size_t {
        using T = std::decay_t<decltype(cfg)>;
        if constexpr (std::is_same_v<T, EcaConfig>) {
          return cfg.k;
        } else if constexpr (std::is_same_v<T, SeConfig>) {
          if (cfg.reduction == 0 || c % cfg.reduction != 0) {
            throw ConfigError("se: reduction " + std::to_string(cfg.reduction) + " does not divide " +
                              std::to_string(c));
          }
          return 2 * c * c / cfg.reduction;
        } else if constexpr (std::is_same_v<T, LctConfig>) {
          return 2 * c;
        } else {
          return 0;
        }
      },
      spec);
}

/// Total over every insertion point in `channel_plan`.
inline std::size_t param_count(const AttentionSpec& spec, std::span<const std::size_t> channel_plan) {
  std::size_t total = 0;
  for (auto c : channel_plan) total += block_param_count(spec, c);
  return total;
}

// ---- modules -------------------------------------------------------------

using WeightMap = std::map<std::string, Tensor>;
using BoundWeights = std::map<std::string, Var>;

class AttentionModule {
 public:
  AttentionModule() = default;

  /// `channels` may be 0 for kinds whose weights do not depend on C.
  AttentionModule(AttentionSpec spec, std::size_t channels, WeightMap weights)
      : spec_(std::move(spec)), channels_(channels), weights_(std::move(weights)) {
    validate();
  }

  /// Default initialization: uniform(+-1/sqrt(fan_in)) for eca/se, w=1 and beta=0 for lct.
  static AttentionModule create(const AttentionSpec& spec, std::size_t channels, std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](Shape shape, double bound) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor t(std::move(shape));
      for (auto& v : t.data()) v = dist(rng);
      return t;
    };
    WeightMap w;
    switch (kind_of(spec)) {
      case AttentionKind::eca: {
        const auto k = std::get<EcaConfig>(spec).k;
        if (k == 0 || k % 2 == 0) throw ConfigError("eca: kernel size must be odd, got " + std::to_string(k));
        w["kernel"] = uniform(Shape{k}, 1.0 / std::sqrt(static_cast<double>(k)));
        break;
      }
      case AttentionKind::se: {
        const auto r = std::get<SeConfig>(spec).reduction;
        if (r == 0 || channels == 0 || channels % r != 0) {
          throw ConfigError("se: reduction " + std::to_string(r) + " does not divide " + std::to_string(channels));
        }
        const std::size_t hidden = channels / r;
        w["w1"] = uniform(Shape{hidden, channels}, 1.0 / std::sqrt(static_cast<double>(channels)));
        w["w2"] = uniform(Shape{channels, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)));
        break;
      }
      case AttentionKind::lct: {
        if (channels == 0) throw ConfigError("lct: channel count required");
        w["w"] = Tensor::full(Shape{channels}, 1.0);
        w["beta"] = Tensor::zeros(Shape{channels});
        break;
      }
      default: break;
    }
    return AttentionModule(spec, channels, std::move(w));
  }

  AttentionKind kind() const { return kind_of(spec_); }
  const AttentionSpec& spec() const { return spec_; }
  std::size_t channels() const { return channels_; }
  const WeightMap& weights() const { return weights_; }

  void set_weight(const std::string& name, Tensor value) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw ConfigError("module has no weight named '" + name + "'");
    require_same_shape(it->second, value, "set_weight");
    it->second = std::move(value);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : weights_) n += t.size();
    return n;
  }

  BoundWeights bind(Tape& tape) const {
    BoundWeights out;
    for (const auto& [name, t] : weights_) out.emplace(name, tape.leaf(t));
    return out;
  }

  Gated forward(const Var& x, const BoundWeights& w) const {
    const auto g = ops::nchw(x.value(), "attention forward");
    if (channels_ && g.c != channels_) {
      throw ShapeError("module expects " + std::to_string(channels_) + " channels, input has " + std::to_string(g.c));
    }
    auto weight = [&w](const char* name) -> const Var& {
      auto it = w.find(name);
      if (it == w.end()) throw ContractError(std::string("unbound weight '") + name + "'");
      return it->second;
    };
    return std::visit(
        [&](const auto& cfg) -> Gated {
          using T = std::decay_t<decltype(cfg)>;
          if constexpr (std::is_same_v<T, IdentityConfig>) {
            return {x, x.tape().leaf(Tensor::full(Shape{g.n, g.c}, 1.0))};
          } else if constexpr (std::is_same_v<T, BioConfig>) {
            return bio_attention(x, cfg);
          } else if constexpr (std::is_same_v<T, SimamConfig>) {
            return simam_attention(x, cfg);
          } else if constexpr (std::is_same_v<T, GctConfig>) {
            return gct_attention(x, cfg);
          } else if constexpr (std::is_same_v<T, EcaConfig>) {
            return eca_attention(x, weight("kernel"));
          } else if constexpr (std::is_same_v<T, SeConfig>) {
            return se_attention(x, weight("w1"), weight("w2"));
          } else {
            return lct_attention(x, weight("w"), weight("beta"), cfg);
          }
        },
        spec_);
  }

  /// Forward on a throwaway tape.
  Tensor apply(const Tensor& x) const {
    Tape tape;
    return forward(tape.leaf(x), bind(tape)).output.value();
  }

  /// The multiplicative gate for `x` (N x C; N x C x H x W for simam).
  Tensor gate(const Tensor& x) const {
    Tape tape;
    return forward(tape.leaf(x), bind(tape)).gate.value();
  }

 private:
  void validate() const {
    auto need = [this](const std::string& name, std::optional<Shape> shape) {
      auto it = weights_.find(name);
      if (it == weights_.end()) throw ConfigError(std::string(to_string(kind())) + ": missing weight '" + name + "'");
      if (shape && it->second.shape() != *shape) {
        throw ShapeError(std::string(to_string(kind())) + ": weight '" + name + "' has shape " +
                         shape_string(it->second.shape()) + ", expected " + shape_string(*shape));
      }
    };
    std::size_t expected = 0;
    std::visit(
        [&](const auto& cfg) {
          using T = std::decay_t<decltype(cfg)>;
          if constexpr (std::is_same_v<T, BioConfig>) {
            cfg.validate();
          } else if constexpr (std::is_same_v<T, EcaConfig>) {
            if (cfg.k == 0 || cfg.k % 2 == 0) throw ConfigError("eca: kernel size must be odd, got " + std::to_string(cfg.k));
            need("kernel", Shape{cfg.k});
            expected = 1;
          } else if constexpr (std::is_same_v<T, SeConfig>) {
            if (cfg.reduction == 0 || channels_ == 0 || channels_ % cfg.reduction != 0) {
              throw ConfigError("se: reduction " + std::to_string(cfg.reduction) + " does not divide " +
                                std::to_string(channels_));
            }
            const std::size_t hidden = channels_ / cfg.reduction;
            need("w1", Shape{hidden, channels_});
            need("w2", Shape{channels_, hidden});
            expected = 2;
          } else if constexpr (std::is_same_v<T, LctConfig>) {
            if (cfg.groups == 0 || channels_ == 0 || channels_ % cfg.groups != 0) {
              throw ConfigError("lct: groups " + std::to_string(cfg.groups) + " do not divide " +
                                std::to_string(channels_));
            }
            need("w", Shape{channels_});
            need("beta", Shape{channels_});
            expected = 2;
          }
        },
        spec_);
    if (weights_.size() != expected) {
      throw ConfigError(std::string(to_string(kind())) + ": unexpected weight count " + std::to_string(weights_.size()));
    }
  }

  AttentionSpec spec_ = IdentityConfig{};
  std::size_t channels_ = 0;
  WeightMap weights_;
};

// ---- JSON ----------------------------------------------------------------

inline nlohmann::json hyper_to_json(const AttentionSpec& spec) {
  return std::visit(
      [](const auto& cfg) -> nlohmann::json {
        using T = std::decay_t<decltype(cfg)>;
        if constexpr (std::is_same_v<T, BioConfig>) {
          return {{"alpha", cfg.alpha},
                  {"b", cfg.b},
                  {"lambda", cfg.lambda},
                  {"wiring", cfg.wiring == BioWiring::v1 ? "v1" : "v2"},
                  {"eps_norm", cfg.eps_norm},
                  {"base_floor", cfg.base_floor}};
        } else if constexpr (std::is_same_v<T, SimamConfig>) {
          return {{"lambda_e", cfg.lambda_e}};
        } else if constexpr (std::is_same_v<T, GctConfig>) {
          return {{"c", cfg.c}, {"eps", cfg.eps}};
        } else if constexpr (std::is_same_v<T, EcaConfig>) {
          return {{"k", cfg.k}};
        } else if constexpr (std::is_same_v<T, SeConfig>) {
          return {{"reduction", cfg.reduction}};
        } else if constexpr (std::is_same_v<T, LctConfig>) {
          return {{"groups", cfg.groups}, {"eps", cfg.eps}};
        } else {
          return nlohmann::json::object();
        }
      },
      spec);
}

inline nlohmann::json spec_to_json(const AttentionSpec& spec) {
  return {{"kind", std::string(to_string(kind_of(spec)))}, {"hyper", hyper_to_json(spec)}};
}

/// Parses {"kind": ..., "hyper": {...}}; absent hyper fields keep their defaults.
inline AttentionSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("attention config needs a \"kind\" field");
  const nlohmann::json hyper = j.value("hyper", nlohmann::json::object());
  if (!hyper.is_object()) throw ConfigError("attention \"hyper\" must be an object");
  AttentionSpec spec = default_spec(parse_kind(j.at("kind").get<std::string>()));
  try {
    std::visit(
        [&hyper](auto& cfg) {
          using T = std::decay_t<decltype(cfg)>;
          if constexpr (std::is_same_v<T, BioConfig>) {
            cfg.alpha = hyper.value("alpha", cfg.alpha);
            cfg.b = hyper.value("b", cfg.b);
            cfg.lambda = hyper.value("lambda", cfg.lambda);
            cfg.eps_norm = hyper.value("eps_norm", cfg.eps_norm);
            cfg.base_floor = hyper.value("base_floor", cfg.base_floor);
            const auto wiring = hyper.value("wiring", std::string("v1"));
            if (wiring == "v1") cfg.wiring = BioWiring::v1;
            else if (wiring == "v2") cfg.wiring = BioWiring::v2;
            else throw ConfigError("bio: unknown wiring '" + wiring + "'");
            cfg.validate();
          } else if constexpr (std::is_same_v<T, SimamConfig>) {
            cfg.lambda_e = hyper.value("lambda_e", cfg.lambda_e);
          } else if constexpr (std::is_same_v<T, GctConfig>) {
            cfg.c = hyper.value("c", cfg.c);
            cfg.eps = hyper.value("eps", cfg.eps);
          } else if constexpr (std::is_same_v<T, EcaConfig>) {
            cfg.k = hyper.value("k", cfg.k);
          } else if constexpr (std::is_same_v<T, SeConfig>) {
            cfg.reduction = hyper.value("reduction", cfg.reduction);
          } else if constexpr (std::is_same_v<T, LctConfig>) {
            cfg.groups = hyper.value("groups", cfg.groups);
            cfg.eps = hyper.value("eps", cfg.eps);
          }
        },
        spec);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("attention hyper: ") + e.what());
  }
  return spec;
}

/// Weight file for `name` next to the module JSON: <dir>/<stem>.<name>.ten
inline std::filesystem::path weight_path(const std::filesystem::path& json_path, const std::string& name) {
  return json_path.parent_path() / (json_path.stem().string() + "." + name + ".ten");
}

inline void save_module(const std::filesystem::path& json_path, const AttentionModule& m) {
  auto j = spec_to_json(m.spec());
  if (m.channels()) j["channels"] = m.channels();
  io::write_file_atomic(json_path, j.dump(2) + "\n");
  for (const auto& [name, t] : m.weights()) io::save_ten(weight_path(json_path, name), t);
}

inline AttentionModule load_module(const std::filesystem::path& json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(json_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + json_path.string() + ": " + e.what());
  }
  AttentionSpec spec = spec_from_json(j);
  WeightMap weights;
  std::size_t channels = j.value("channels", std::size_t{0});
  auto load = [&](const std::string& name) { weights[name] = io::load_ten(weight_path(json_path, name)); };
  switch (kind_of(spec)) {
    case AttentionKind::eca: load("kernel"); break;
    case AttentionKind::se:
      load("w1");
      load("w2");
      if (!channels) channels = weights["w1"].extent(1);
      break;
    case AttentionKind::lct:
      load("w");
      load("beta");
      if (!channels) channels = weights["w"].extent(0);
      break;
    default: break;
  }
  return AttentionModule(std::move(spec), channels, std::move(weights));
}

}  // namespace bioattn::attention
