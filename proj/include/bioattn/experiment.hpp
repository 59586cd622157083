#pragma once

// Benchmark protocol: train every attention variant on the same data for each
// seed, score the test set, and assemble a comparison report.

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "bioattn/attention.hpp"
#include "bioattn/metrics.hpp"
#include "bioattn/recon.hpp"
#include "bioattn/tensor_io.hpp"

namespace bioattn::experiment {

struct Variant {
  std::string name;
  attention::AttentionSpec spec;
};

struct ExperimentConfig {
  std::size_t image_size = 64;
  std::size_t train_count = 16;
  std::size_t test_count = 8;
  std::uint64_t data_seed = 1000;
  recon::MaskSpec mask{};
  std::vector<std::size_t> channels{16, 16};
  double output_init_scale = 0.1;
  std::vector<Variant> variants;
  std::string reference = "proposed";
  recon::TrainConfig train{};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  void validate() const {
    if (image_size < recon::kMinPhantomExtent || !fft::is_power_of_two(image_size)) {
      throw ConfigError("image size must be a power of two >= 32");
    }
    if (train_count == 0 || test_count == 0) throw ConfigError("train and test counts must be positive");
    if (variants.empty()) throw ConfigError("at least one variant is required");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (train.steps == 0) throw ConfigError("optimizer steps must be positive");
    bool has_ref = false;
    for (std::size_t i = 0; i < variants.size(); ++i) {
      if (variants[i].name.empty() || variants[i].name == kZeroFilled) throw ConfigError("invalid variant name");
      for (std::size_t j = 0; j < i; ++j)
        if (variants[j].name == variants[i].name) throw ConfigError("duplicate variant '" + variants[i].name + "'");
      has_ref = has_ref || variants[i].name == reference;
    }
    if (!has_ref) throw ConfigError("reference variant '" + reference + "' is not in the variant list");
    recon::NetworkConfig{channels, {}, output_init_scale}.validate();
    mask.validate();
  }

  static constexpr const char* kZeroFilled = "zero_filled";
};

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace detail

/// Missing sections and fields keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("data")) {
      const auto& d = j.at("data");
      cfg.image_size = detail::get_or(d, "size", cfg.image_size);
      cfg.train_count = detail::get_or(d, "train", cfg.train_count);
      cfg.test_count = detail::get_or(d, "test", cfg.test_count);
      cfg.data_seed = detail::get_or(d, "seed", cfg.data_seed);
    }
    cfg.mask.height = cfg.mask.width = cfg.image_size;
    if (j.contains("mask")) {
      const auto& m = j.at("mask");
      cfg.mask.acceleration = detail::get_or(m, "acceleration", cfg.mask.acceleration);
      cfg.mask.acs_lines = detail::get_or(m, "acs_lines", cfg.mask.acs_lines);
      cfg.mask.seed = detail::get_or(m, "seed", cfg.mask.seed);
      cfg.mask.pattern = recon::parse_mask_pattern(detail::get_or<std::string>(m, "pattern", "uniform-random-lines"));
    }
    if (j.contains("network")) {
      const auto& n = j.at("network");
      cfg.channels = detail::get_or(n, "channels", cfg.channels);
      cfg.output_init_scale = detail::get_or(n, "output_init_scale", cfg.output_init_scale);
    }
    if (j.contains("variants")) {
      for (const auto& v : j.at("variants")) {
        auto spec = attention::spec_from_json(v);
        const std::string name = detail::get_or<std::string>(v, "name", std::string(attention::to_string(attention::kind_of(spec))));
        cfg.variants.push_back({name, spec});
      }
    }
    cfg.reference = detail::get_or(j, "reference", cfg.reference);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      const auto name = detail::get_or<std::string>(o, "name", "sgd");
      if (name == "sgd") cfg.train.optimizer = recon::OptimizerKind::sgd;
      else if (name == "rmsprop") cfg.train.optimizer = recon::OptimizerKind::rmsprop;
      else throw ConfigError("unknown optimizer '" + name + "'");
      cfg.train.learning_rate = detail::get_or(o, "learning_rate", cfg.train.learning_rate);
      cfg.train.steps = detail::get_or(o, "steps", cfg.train.steps);
      cfg.train.batch_size = detail::get_or(o, "batch_size", cfg.train.batch_size);
    }
    cfg.seeds = detail::get_or(j, "seeds", cfg.seeds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

/// Default desk-scale comparison: baseline, proposed, SimAM and GCT over five seeds.
inline ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.mask = recon::MaskSpec{64, 64, 4.0, 8, 7, recon::MaskPattern::uniform_random_lines};
  cfg.variants = {{"baseline", attention::IdentityConfig{}},
                  {"proposed", attention::BioConfig{}},
                  {"simam", attention::SimamConfig{}},
                  {"gct", attention::GctConfig{}}};
  cfg.train.learning_rate = 0.1;
  cfg.train.steps = 100;
  cfg.train.batch_size = 4;
  return cfg;
}

struct VariantRun {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t param_count = 0;
  std::vector<double> loss_history;
  Tensor predictions;  // test set, N x 1 x H x W
};

struct ExperimentResult {
  metrics::MetricsReport report;
  std::vector<VariantRun> runs;  // variant-major, seed-minor
  recon::Dataset test;
  std::size_t baseline_params = 0;
};

using Logger = std::function<void(const std::string&)>;

/// Worker cap from BIOATTN_THREADS, else hardware concurrency.
inline std::size_t default_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BIOATTN_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    } catch (const std::exception&) {
    }
  }
  return n;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t threads = 1, const Logger& log = {}) {
  cfg.validate();
  auto mask_spec = cfg.mask;
  mask_spec.height = mask_spec.width = cfg.image_size;
  const Tensor mask = recon::make_mask(mask_spec);
  const auto train_set = recon::make_dataset(cfg.train_count, cfg.image_size, cfg.data_seed, mask);
  const auto test_set = recon::make_dataset(cfg.test_count, cfg.image_size, cfg.data_seed + cfg.train_count, mask);
  const std::size_t baseline = recon::ReconNetwork::build({cfg.channels, attention::IdentityConfig{}, cfg.output_init_scale}, 0)
                                   .param_count();

  const std::size_t jobs = cfg.variants.size() * cfg.seeds.size();
  std::vector<VariantRun> runs(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (std::size_t job = next++; job < jobs; job = next++) {
      const auto& variant = cfg.variants[job / cfg.seeds.size()];
      const auto seed = cfg.seeds[job % cfg.seeds.size()];
      try {
        auto net = recon::ReconNetwork::build({cfg.channels, variant.spec, cfg.output_init_scale}, seed);
        auto tc = cfg.train;
        tc.seed = seed;
        auto trained = recon::train(net, train_set, tc);
        runs[job] = {variant.name, seed, net.param_count(), std::move(trained.loss_history), net.predict(test_set.inputs)};
        if (log) {
          std::lock_guard lock(log_mutex);
          log(fmt::format("{} seed {}: loss {:.6g} -> {:.6g}", variant.name, seed, runs[job].loss_history.front(),
                          runs[job].loss_history.back()));
        }
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(std::max<std::size_t>(threads, 1), jobs); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentResult result;
  result.baseline_params = baseline;
  metrics::MethodMetrics zf{ExperimentConfig::kZeroFilled, std::nullopt, {}};
  for (auto seed : cfg.seeds) {
    auto rows = recon::score_images(test_set.inputs, test_set, fmt::format("s{}_img", seed));
    zf.rows.insert(zf.rows.end(), rows.begin(), rows.end());
  }
  result.report.methods.push_back(std::move(zf));
  std::vector<std::string> competitors;
  for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
    const auto& variant = cfg.variants[v];
    const std::size_t overhead = attention::param_count(variant.spec, cfg.channels);
    metrics::MethodMetrics mm{variant.name, overhead, {}};
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      const auto& run = runs[v * cfg.seeds.size() + s];
      if (run.param_count != baseline + overhead) {
        throw ContractError(fmt::format("variant {}: network has {} parameters, expected {} + {}", variant.name,
                                        run.param_count, baseline, overhead));
      }
      auto rows = recon::score_images(run.predictions, test_set, fmt::format("s{}_img", run.seed));
      mm.rows.insert(mm.rows.end(), rows.begin(), rows.end());
    }
    result.report.methods.push_back(std::move(mm));
    competitors.push_back(variant.name);
  }
  result.report.finalize(cfg.reference, competitors);
  result.runs = std::move(runs);
  result.test = test_set;
  return result;
}

/// Writes report.csv, report.json, loss_<variant>.csv, and for the first seed
/// ground_truth.ten, zero_filled.ten, recon_<variant>.ten and
/// error_<variant>.ten (absolute error over the largest error of any method,
/// per image). Image stacks are N x H x W.
inline void write_outputs(const ExperimentResult& result, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  io::write_file_atomic(out_dir / "report.csv", result.report.to_csv());
  auto json = result.report.to_json();
  json["baseline_params"] = result.baseline_params;
  io::write_file_atomic(out_dir / "report.json", json.dump(2) + "\n");

  std::map<std::string, std::vector<const VariantRun*>> by_variant;
  std::vector<std::string> order;
  for (const auto& r : result.runs) {
    if (!by_variant.count(r.variant)) order.push_back(r.variant);
    by_variant[r.variant].push_back(&r);
  }
  for (const auto& name : order) {
    const auto& runs = by_variant[name];
    std::string csv = "step";
    for (const auto* r : runs) csv += fmt::format(",seed_{}", r->seed);
    csv += "\n";
    for (std::size_t t = 0; t < runs.front()->loss_history.size(); ++t) {
      csv += std::to_string(t);
      for (const auto* r : runs) csv += fmt::format(",{}", r->loss_history[t]);
      csv += "\n";
    }
    io::write_file_atomic(out_dir / fmt::format("loss_{}.csv", name), csv);
  }

  const auto& test = result.test;
  const std::size_t n = test.size(), h = test.targets.extent(2), w = test.targets.extent(3);
  auto stack = [&](const Tensor& t) { return t.reshaped(Shape{n, h, w}); };
  io::save_ten(out_dir / "ground_truth.ten", stack(test.targets));
  io::save_ten(out_dir / "zero_filled.ten", stack(test.inputs));

  std::vector<std::pair<std::string, const Tensor*>> first;
  first.emplace_back(experiment::ExperimentConfig::kZeroFilled, &test.inputs);
  for (const auto& name : order) first.emplace_back(name, &by_variant[name].front()->predictions);
  std::vector<double> peak(n, 0.0);
  for (const auto& [_, pred] : first)
    for (std::size_t i = 0; i < pred->size(); ++i)
      peak[i / (h * w)] = std::max(peak[i / (h * w)], std::abs((*pred)[i] - test.targets[i]));
  for (const auto& [name, pred] : first) {
    if (name != experiment::ExperimentConfig::kZeroFilled) io::save_ten(out_dir / fmt::format("recon_{}.ten", name), stack(*pred));
    Tensor err(Shape{n, h, w});
    for (std::size_t i = 0; i < err.size(); ++i) {
      const double p = peak[i / (h * w)];
      err[i] = p > 0 ? std::abs((*pred)[i] - test.targets[i]) / p : 0.0;
    }
    io::save_ten(out_dir / fmt::format("error_{}.ten", name), err);
  }
}

}  // namespace bioattn::experiment
