// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowvi/harness.hpp"
#include "flowvi/numdiff.hpp"

namespace flowvi {

namespace detail {

inline double rel_err(const Vec& got, const Vec& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-10);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return mix64(mix64(base) ^ salt);
}

// Derivative oracle pass over one built target: analytic gradient against
// central differences of the value, and the Hessian diagonal against central
// differences of the gradient. Points come from a fixed-seed standard normal;
// for ReLU networks they are resampled until every pre-activation clears a
// margin, since the exact derivative only exists off the kinks. The hessian
// comparison is skipped for Gauss-Newton on curved activations, where the
// diagonal drops the activation curvature term by construction.
inline bool check_target_derivatives(const BuiltTarget& built, const std::string& label,
                                     std::ostream& os, int n_points = 20) {
  const TargetModel& target = *built.model;
  const auto* bnn = dynamic_cast<const BnnTarget*>(&target);
  const bool relu_kinks = bnn != nullptr && built.arch.hidden > 0 &&
                          built.arch.activation == MlpArchitecture::Activation::kRelu;
  const bool approx_hess = bnn != nullptr && !bnn->uses_hutchinson() && built.arch.hidden > 0 &&
                           built.arch.activation == MlpArchitecture::Activation::kTanh;

  Rng rng = derive_rng(20260815, 0, 0xc4ecULL);
  double worst_grad = 0.0;
  double worst_hess = 0.0;
  const double hess_tol = bnn != nullptr && bnn->uses_hutchinson() ? 0.10 : 1e-3;
  for (int i = 0; i < n_points; ++i) {
    Vec z = standard_normal(rng, target.dim());
    if (relu_kinks) {
      int tries = 0;
      while (bnn->min_hidden_gap(z) < 1e-3 && ++tries < 100) z = standard_normal(rng, target.dim());
    }
    worst_grad = std::max(worst_grad, rel_err(target.grad(z), finite_diff_grad(target, z)));
    if (!approx_hess)
      worst_hess = std::max(worst_hess, rel_err(target.hess_diag(z), finite_diff_hess_diag(target, z)));
  }
  const bool grad_ok = worst_grad < 1e-5;
  const bool hess_ok = worst_hess < hess_tol;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s grad max rel err %.3e (tol 1e-05) %s\n", label.c_str(),
                worst_grad, grad_ok ? "ok" : "FAIL");
  os << line;
  if (approx_hess) {
    std::snprintf(line, sizeof(line),
                  "%-10s hess gauss_newton diagonal is approximate for tanh, check skipped\n",
                  label.c_str());
    os << line;
    return grad_ok;
  }
  std::snprintf(line, sizeof(line), "%-10s hess max rel err %.3e (tol %.0e) %s\n", label.c_str(),
                worst_hess, hess_tol, hess_ok ? "ok" : "FAIL");
  os << line;
  return grad_ok && hess_ok;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"particle mixture optimizer harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::string vary;

  auto* cmd_run = app.add_subcommand("run", "run one experiment from a JSON config");
  cmd_run->add_option("config", config_path, "experiment config (JSON)")->required();
  cmd_run->add_option("--output-dir", output_dir, "override the configured output directory");

  auto* cmd_check = app.add_subcommand("check-grads", "finite-difference oracles for a config's target");
  cmd_check->add_option("config", config_path, "experiment config (JSON)")->required();

  auto* cmd_sweep = app.add_subcommand("sweep", "repeat a run over mixture sizes");
  cmd_sweep->add_option("config", config_path, "experiment config (JSON)")->required();
  cmd_sweep->add_option("--vary", vary, "parameter list, e.g. K=1,3,10")->required();
  cmd_sweep->add_option("--output-dir", output_dir, "override the configured output directory");

  auto* cmd_ablate = app.add_subcommand("ablate-md", "run with and without the weight update");
  cmd_ablate->add_option("config", config_path, "experiment config (JSON)")->required();
  cmd_ablate->add_option("--output-dir", output_dir, "override the configured output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // unknown subcommand/flag or missing argument
  }

  if (!std::filesystem::exists(config_path)) {
    std::cerr << "config not found: " << config_path << "\n";
    return 2;
  }

  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;

    if (cmd_run->parsed()) {
      const RunResult res = run_experiment(cfg);
      std::cout << "wrote " << res.csv_path << "\n";
      const auto& rep = res.final_report;
      if (std::isfinite(rep.kl_estimate)) std::cout << "final kl " << rep.kl_estimate << "\n";
      if (std::isfinite(rep.elbo_neg_estimate))
        std::cout << "final elbo_neg " << rep.elbo_neg_estimate << "\n";
      if (std::isfinite(rep.predictive_loss))
        std::cout << "final pred_loss " << rep.predictive_loss << "\n";
      return 0;
    }

    if (cmd_check->parsed()) {
      BuiltTarget built = build_target(cfg);
      const bool ok = detail::check_target_derivatives(built, cfg.target.type, std::cout);
      std::cout << (ok ? "all derivative checks passed\n" : "derivative checks FAILED\n");
      return ok ? 0 : 1;
    }

    if (cmd_sweep->parsed()) {
      if (vary.rfind("K=", 0) != 0)
        throw std::invalid_argument("sweep: --vary must look like K=1,3,10");
      std::vector<int> ks;
      std::stringstream ss(vary.substr(2));
      std::string tok;
      while (std::getline(ss, tok, ',')) ks.push_back(std::stoi(tok));
      if (ks.empty()) throw std::invalid_argument("sweep: no K values given");
      for (int k : ks) {
        ExperimentConfig c = cfg;
        c.K = k;
        c.run_name = cfg.run_name + "_K" + std::to_string(k);
        c.seed = detail::derive_seed(cfg.seed, static_cast<std::uint64_t>(k));
        c.flow.seed = c.seed;
        const RunResult res = run_experiment(c);
        const auto& rep = res.final_report;
        std::cout << "K=" << k;
        if (std::isfinite(rep.kl_estimate)) std::cout << " final kl " << rep.kl_estimate;
        if (std::isfinite(rep.elbo_neg_estimate))
          std::cout << " final elbo_neg " << rep.elbo_neg_estimate;
        if (std::isfinite(rep.predictive_loss))
          std::cout << " final pred_loss " << rep.predictive_loss;
        std::cout << "\n";
      }
      return 0;
    }

    if (cmd_ablate->parsed()) {
      for (bool md : {true, false}) {
        ExperimentConfig c = cfg;
        c.flow.md_weights = md;
        c.run_name = cfg.run_name + (md ? "_md" : "_nomd");
        const RunResult res = run_experiment(c);
        const auto& rep = res.final_report;
        std::cout << (md ? "md_weights on " : "md_weights off");
        if (std::isfinite(rep.kl_estimate)) std::cout << " final kl " << rep.kl_estimate;
        if (std::isfinite(rep.elbo_neg_estimate))
          std::cout << " final elbo_neg " << rep.elbo_neg_estimate;
        if (std::isfinite(rep.predictive_loss))
          std::cout << " final pred_loss " << rep.predictive_loss;
        std::cout << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("flowvi");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace flowvi
