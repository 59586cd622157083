// bioattn command-line entry point.
//
// Machine-readable output (CSV) goes to stdout; diagnostics and progress go to
// stderr. Files are only written below the directory given by --out.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "bioattn/bioattn.hpp"

namespace fs = std::filesystem;
using namespace bioattn;

namespace {

struct DynamicsArgs {
  double lambda = 1.0;
  double alpha = 2.0;
  double b = 2.0;
  double n0 = 0.1;
  std::size_t steps = 50;
  std::string sweep;  // lo:hi:count
  std::size_t transient = 1000;
  std::size_t samples = 16;
  std::string out;
};

std::string fixed_point_footer(const ecology::EcologyParams& p) {
  const auto fp = ecology::fixed_point(p);
  if (!fp) return "# fixed_point=none (no nontrivial fixed point for lambda <= 1)";
  const auto st = ecology::stability(p);
  return fmt::format("# fixed_point={} multiplier={} {}", *fp, st.multiplier, ecology::to_string(st.cls));
}

int run_dynamics(const DynamicsArgs& a) {
  const ecology::EcologyParams p{a.lambda, a.alpha, a.b};
  p.validate();
  std::string csv;
  std::string filename;
  if (!a.sweep.empty()) {
    double lo = 0, hi = 0;
    std::size_t count = 0;
    char c1 = 0, c2 = 0;
    std::istringstream ss(a.sweep);
    if (!(ss >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' || count == 0 || !(lo > 0) || hi < lo) {
      throw ConfigError("--sweep expects LO:HI:COUNT with 0 < LO <= HI and COUNT >= 1");
    }
    ecology::SweepSpec spec{ecology::linspace(lo, hi, count), a.alpha, a.b, a.n0, a.transient, a.samples};
    csv = "lambda,value\n";
    for (const auto& row : ecology::bifurcation_sweep(spec))
      for (double v : row.samples) csv += fmt::format("{},{}\n", row.lambda, v);
    filename = "sweep.csv";
  } else {
    const auto tr = ecology::iterate(a.n0, p, a.steps);
    csv = "t,value\n";
    for (std::size_t t = 0; t < tr.values.size(); ++t) csv += fmt::format("{},{}\n", t, tr.values[t]);
    filename = "trajectory.csv";
  }
  if (!a.out.empty()) io::write_file_atomic(fs::path(a.out) / filename, csv);
  std::cout << csv << fixed_point_footer(p) << "\n";
  return 0;
}

struct AttendArgs {
  std::string kind = "bio";
  std::string config;
  std::string input;
  std::string out;
  std::string name = "attended.ten";
  std::uint64_t seed = 0;
};

int run_attend(const AttendArgs& a) {
  const Tensor x = io::load_ten(a.input);
  require_rank(x, 4, "attend input");
  attention::AttentionModule module =
      a.config.empty()
          ? attention::AttentionModule::create(attention::default_spec(attention::parse_kind(a.kind)), x.extent(1), a.seed)
          : attention::load_module(a.config);
  ad::Tape tape;
  const auto result = module.forward(tape.leaf(x), module.bind(tape));
  io::save_ten(fs::path(a.out) / a.name, result.output.value());

  const Tensor& gate = result.gate.value();
  const std::size_t n = x.extent(0), c = x.extent(1);
  const std::size_t per = gate.size() / (n * c);  // 1 for channel gates, H*W for simam
  std::string csv = "sample,channel,gate\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t k = 0; k < per; ++k) s += gate[(i * c + ch) * per + k];
      csv += fmt::format("{},{},{}\n", i, ch, s / static_cast<double>(per));
    }
  }
  std::cout << csv;
  return 0;
}

struct MetricsArgs {
  std::string a;
  std::string b;
  double max_val = 1.0;
};

int run_metrics(const MetricsArgs& a) {
  const Tensor x = io::load_ten(a.a);
  const Tensor y = io::load_ten(a.b);
  require_rank(x, 2, "metrics input");
  require_same_shape(x, y, "metrics");
  metrics::SSIMConfig cfg;
  cfg.dynamic_range = a.max_val;
  std::cout << fmt::format("{},{},{}\n", metrics::mse(x, y), metrics::psnr(x, y, a.max_val), metrics::ssim(x, y, cfg));
  return 0;
}

struct MaskArgs {
  std::size_t size = 64;
  double acceleration = 4.0;
  std::size_t acs = 8;
  std::string pattern = "uniform-random-lines";
  std::uint64_t seed = 0;
  std::string out;
};

int run_mask(const MaskArgs& a) {
  recon::MaskSpec spec{a.size, a.size, a.acceleration, a.acs, a.seed, recon::parse_mask_pattern(a.pattern)};
  const Tensor mask = recon::make_mask(spec);
  io::save_ten(fs::path(a.out) / "mask.ten", mask);
  std::cout << "sampled_lines,target_lines,acs_lines\n"
            << fmt::format("{},{},{}\n", recon::sampled_lines(mask), spec.target_lines(), spec.acs_lines);
  return 0;
}

struct BenchArgs {
  std::string config;
  std::string out;
  std::size_t threads = 0;
};

int run_bench(const BenchArgs& a) {
  const auto cfg = a.config.empty() ? experiment::default_config() : experiment::load_config(a.config);
  const std::size_t threads = a.threads ? a.threads : experiment::default_threads();
  const auto result = experiment::run_experiment(cfg, threads, [](const std::string& line) { std::cerr << line << "\n"; });
  experiment::write_outputs(result, a.out);
  std::string csv = "method,overhead,psnr,mse,ssim,wilcoxon_p_two_sided,wilcoxon_p_one_sided\n";
  for (const auto& m : result.report.methods) {
    std::string p2, p1;
    if (const auto* c = result.report.comparison_for(m.method)) {
      p2 = fmt::format("{}", c->test.p_two_sided);
      p1 = fmt::format("{}", c->test.p_greater);
    }
    csv += fmt::format("{},{},{},{},{},{},{}\n", m.method, m.overhead ? std::to_string(*m.overhead) : "", m.mean_psnr,
                       m.mean_mse, m.mean_ssim, p2, p1);
  }
  std::cout << csv;
  std::cerr << "wrote " << (fs::path(a.out) / "report.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-free population-dynamics channel attention: analysis and benchmark tool"};
  app.set_version_flag("--version", std::string("bioattn ") + kVersion);
  app.require_subcommand(1);

  DynamicsArgs dyn;
  auto* dynamics = app.add_subcommand("dynamics", "Iterate the population map or sweep lambda; CSV to stdout");
  dynamics->add_option("--lambda", dyn.lambda, "Growth rate (> 0)")->capture_default_str();
  dynamics->add_option("--alpha", dyn.alpha, "Density coefficient (> 0)")->capture_default_str();
  dynamics->add_option("--b", dyn.b, "Exponent (> 0)")->capture_default_str();
  dynamics->add_option("--n0", dyn.n0, "Initial population (>= 0)")->capture_default_str();
  dynamics->add_option("--steps", dyn.steps, "Trajectory length")->check(CLI::PositiveNumber)->capture_default_str();
  dynamics->add_option("--sweep", dyn.sweep, "Bifurcation sweep LO:HI:COUNT over lambda");
  dynamics->add_option("--transient", dyn.transient, "Sweep: discarded iterations")->capture_default_str();
  dynamics->add_option("--samples", dyn.samples, "Sweep: recorded iterations")->check(CLI::PositiveNumber)->capture_default_str();
  dynamics->add_option("--out", dyn.out, "Also write the CSV into this directory");

  AttendArgs att;
  auto* attend = app.add_subcommand("attend", "Apply an attention module to a 4-D .ten tensor");
  attend->add_option("--kind", att.kind, "identity|bio|simam|gct|eca|se|lct")->capture_default_str();
  attend->add_option("--config", att.config, "Module JSON ({\"kind\", \"hyper\"}) with weight files alongside");
  attend->add_option("--input", att.input, "Input N x C x H x W .ten")->required()->check(CLI::ExistingFile);
  attend->add_option("--out", att.out, "Output directory")->required();
  attend->add_option("--name", att.name, "Output file name")->capture_default_str();
  attend->add_option("--seed", att.seed, "Weight init seed for learnable kinds without --config")->capture_default_str();

  MetricsArgs met;
  auto* metrics_cmd = app.add_subcommand("metrics", "Print mse,psnr,ssim of two rank-2 .ten images");
  metrics_cmd->add_option("a", met.a, "Reconstruction")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("b", met.b, "Reference")->required()->check(CLI::ExistingFile);
  metrics_cmd->add_option("--max-val", met.max_val, "Peak value for PSNR and SSIM dynamic range")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  MaskArgs msk;
  auto* mask = app.add_subcommand("mask", "Generate a Cartesian undersampling mask");
  mask->add_option("--size", msk.size, "Square extent")->check(CLI::PositiveNumber)->capture_default_str();
  mask->add_option("--acceleration", msk.acceleration, "Acceleration factor R")->capture_default_str();
  mask->add_option("--acs", msk.acs, "Fully sampled center lines")->capture_default_str();
  mask->add_option("--pattern", msk.pattern, "uniform-random-lines|equispaced-lines")->capture_default_str();
  mask->add_option("--seed", msk.seed, "RNG seed")->capture_default_str();
  mask->add_option("--out", msk.out, "Output directory")->required();

  BenchArgs bch;
  auto* bench = app.add_subcommand("bench", "Train and compare attention variants; writes report.csv/json");
  bench->add_option("--config", bch.config, "Experiment JSON (default: built-in desk config)")->check(CLI::ExistingFile);
  bench->add_option("--out", bch.out, "Output directory")->required();
  bench->add_option("--threads", bch.threads, "Worker count (default: BIOATTN_THREADS or all cores)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dynamics) return run_dynamics(dyn);
    if (*attend) return run_attend(att);
    if (*metrics_cmd) return run_metrics(met);
    if (*mask) return run_mask(msk);
    if (*bench) return run_bench(bch);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
