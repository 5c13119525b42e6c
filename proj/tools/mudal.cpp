// mudal: run multi-domain active learning experiments and the theory checks.

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mudal/mudal.hpp"

using namespace mudal;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream in(s);
  std::string cell;
  while (std::getline(in, cell, ',')) {
    try {
      out.push_back(std::stoull(cell));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: bad seed '" + cell + "'");
    }
  }
  if (out.empty()) throw ConfigError("--seeds: empty list");
  return out;
}

int run(const std::string& path, const std::string& seeds, const std::string& out_dir, const std::string& variant,
        const std::string& strategy, const std::string& mode) {
  auto cfg = parse_config(path);
  if (!seeds.empty()) cfg.seeds = parse_seeds(seeds);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (!variant.empty()) cfg.train.variant = parse_variant(variant);
  if (!strategy.empty()) cfg.strategy = parse_strategy(strategy);
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  cfg.validate();
  const auto res = run_experiment(cfg);
  export_outputs(res, cfg.output_dir);
  for (const auto& r : res.runs) {
    std::printf("seed %llu:", static_cast<unsigned long long>(r.seed));
    for (const auto& rm : r.rounds) std::printf(" %.4f", rm.average);
    std::printf("%s\n", r.truncated ? " (truncated)" : "");
  }
  std::printf("outputs in %s\n", cfg.output_dir.c_str());
  return 0;
}

int verify_theory(double grid_step) {
  Rng rng = make_rng(42, 1);
  int failures = 0;
  for (int n = 2; n <= 4; ++n) {
    double worst_gap = 0.0, worst_value = 0.0;
    for (int t = 0; t < 50; ++t) {
      Vector a(n);
      for (int j = 0; j < n; ++j) a[j] = -std::log(1.0 - uniform01(rng));
      a /= a.sum();
      const auto chk = verify_optimal_beta(a, grid_step);
      worst_gap = std::max(worst_gap, chk.gap);
      worst_value = std::max(worst_value, std::abs(chk.value_at_alpha - 1.0));
      if (chk.gap > grid_step + 1e-12 || std::abs(chk.value_at_alpha - 1.0) > 1e-12 ||
          chk.min_value < 1.0 - 1e-12)
        ++failures;
    }
    std::printf("optimal beta, N=%d: max gap %.3g, max |value(alpha) - 1| %.3g\n", n, worst_gap, worst_value);
  }
  Vector a(2), b(2);
  a << 0.8, 0.2;
  b << 0.5, 0.5;
  std::printf("hoeffding term, alpha=(0.8,0.2) beta=(0.5,0.5) d=1 delta=0.05 M=100: %.12g (ratio %.12g)\n",
              hoeffding_term(a, b, {1.0, 0.05, 100}), budget_ratio(a, b));
  std::printf("%s\n", failures ? "FAIL" : "ok");
  return failures ? 1 : 0;
}

int gradcheck() {
  Architecture arch;
  arch.input_dim = 4;
  arch.n_classes = 3;
  arch.n_domains = 3;
  arch.feature_dim = 5;
  arch.encoder_hidden = {6};
  arch.classifier_hidden = {6};
  arch.discriminator_hidden = {6, 6};
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = ModelBundle::create(arch, seed);
    Rng rng = make_rng(seed, 77);
    auto batch = [&](std::size_t rows, std::size_t cols) {
      Batch out;
      out.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index r = 0; r < out.features.rows(); ++r)
        for (Eigen::Index c = 0; c < out.features.cols(); ++c) out.features(r, c) = standard_normal(rng);
      return out;
    };
    std::vector<int> labels(7), targets(7);
    std::vector<double> weights(7);
    for (std::size_t r = 0; r < 7; ++r) {
      labels[r] = static_cast<int>(uniform_index(rng, 3));
      targets[r] = static_cast<int>(uniform_index(rng, 2));
      weights[r] = 0.1 + uniform01(rng);
    }
    const auto w = b.encoder.output_dim();
    const auto h = b.trunk.output_dim();
    worst = std::max(worst, grad_check(b.encoder, batch(7, 4), squared_loss(Matrix::Ones(7, static_cast<Eigen::Index>(w)))));
    worst = std::max(worst, grad_check(b.classifier, batch(7, h), ce_loss(labels, 0.5, weights)));
    worst = std::max(worst, grad_check(b.heads[1], batch(7, h), ce_loss(labels, 1.0, std::vector<double>(7, 1.0))));
    worst = std::max(worst, grad_check(b.discriminator, batch(7, w + 3), bce_loss(targets, weights)));
  }
  std::printf("max relative error over 10 seeds: %.3g (%s)\n", worst, worst < 1e-4 ? "ok" : "FAIL");
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-domain active learning experiments"};
  app.require_subcommand(1);

  std::string config, seeds, out_dir, variant, strategy, mode;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment from a config file");
  run_cmd->add_option("config", config, "Config file")->required();
  run_cmd->add_option("--seeds", seeds, "Comma-separated seeds");
  run_cmd->add_option("--out", out_dir, "Output directory");
  run_cmd->add_option("--variant", variant, "cal | cal_alpha | cal_fa | vanilla");
  run_cmd->add_option("--strategy", strategy, "random | margin | badge | grads");
  run_cmd->add_option("--mode", mode, "cal_optimal | separate | joint | paper_literal");

  double grid_step = 0.01;
  auto* theory_cmd = app.add_subcommand("verify-theory", "Check the budget optimum and the Hoeffding term");
  theory_cmd->add_option("--grid-step", grid_step, "Simplex grid spacing");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every network and loss");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run_cmd->parsed()) return run(config, seeds, out_dir, variant, strategy, mode);
    if (theory_cmd->parsed()) return verify_theory(grid_step);
    if (grad_cmd->parsed()) return gradcheck();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
