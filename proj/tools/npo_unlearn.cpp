// Copyright 2026 The npo-unlearn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// npo_unlearn: generate data, fit models, run unlearning sweeps and theory
// checks. Exit codes: 0 ok, 1 other error, 2 config error, 3 divergence,
// 4 theory-check failure.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "npo/cli.hpp"

namespace {

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kDivergence = 3, kTheory = 4 };

struct Options {
  std::string config_path;
  std::string out;
  std::size_t workers = 1;
  std::optional<std::uint64_t> seed_override;
};

npo::cli::ExperimentConfig resolve(const Options& o) {
  npo::cli::ExperimentConfig c;
  if (!o.config_path.empty()) c = npo::cli::load_config(o.config_path);
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.seed_override) c.seeds = {*o.seed_override};
  c.validate();
  return c;
}

int report_unlearn(const npo::cli::UnlearnOutcome& u) {
  int failed = 0;
  for (const auto& r : u.runs) {
    if (!r.ok) {
      ++failed;
      std::cerr << "run " << r.method << " seed " << r.seed << " diverged: " << r.error << "\n";
    }
  }
  for (const auto& m : u.methods) {
    if (m.mean_curve.empty()) continue;
    const auto& last = m.mean_curve.back();
    std::printf("%-8s seeds=%d final forget_distance=%.6g retain_distance=%.6g\n", m.method.c_str(), m.n_seeds,
                last.forget_distance, last.retain_distance);
  }
  return failed ? kDivergence : kOk;
}

int report_theory(const npo::cli::TheoryOutcome& t) {
  if (t.ga_fit) std::printf("GA  winner=%s (linear R2 %.6f)\n", t.ga_fit->winner(), t.ga_fit->linear.r2);
  if (t.npo_fit) std::printf("NPO winner=%s (log R2 %.6f)\n", t.npo_fit->winner(), t.npo_fit->logarithmic.r2);
  for (const auto& f : t.failures) std::cerr << "theory check failed: " << f << "\n";
  return t.passed ? kOk : kTheory;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unlearning experiments: GA-family vs NPO on synthetic binary classification"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed_override = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON config file (schema_version 1)")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output root directory (overrides output_dir)");
    sub->add_option("--workers", opt.workers, "Parallel workers across (method, seed)")->check(CLI::PositiveNumber);
    sub->add_option("--seed-override", seed_override, "Replace the seed list with this single seed");
  };
  CLI::App* gen = app.add_subcommand("generate", "Write forget/retain datasets");
  CLI::App* train = app.add_subcommand("train", "Fit the reference and retrained models");
  CLI::App* unl = app.add_subcommand("unlearn", "Run unlearning for every (method, seed)");
  CLI::App* sweep = app.add_subcommand("sweep", "Grid-search lr x beta per method");
  CLI::App* th = app.add_subcommand("theory", "Coordinate-dynamics rate and envelope checks");
  CLI::App* all = app.add_subcommand("all", "generate, train, unlearn, theory (and sweep if configured)");
  CLI::App* show = app.add_subcommand("config", "Print the resolved config and its run directory");
  for (auto* s : {gen, train, unl, sweep, th, all, show}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  for (auto* s : {gen, train, unl, sweep, th, all, show}) {
    if (s->parsed() && s->count("--seed-override")) opt.seed_override = seed_override;
  }

  try {
    const npo::cli::ExperimentConfig cfg = resolve(opt);
    if (show->parsed()) {
      std::cout << npo::cli::to_json(cfg).dump(2) << "\n" << npo::cli::run_dir(cfg).string() << "\n";
      return kOk;
    }
    std::cout << "run directory: " << npo::cli::run_dir(cfg).string() << "\n";
    if (gen->parsed()) {
      npo::cli::cmd_generate(cfg);
      return kOk;
    }
    if (train->parsed()) {
      npo::cli::cmd_train(cfg, opt.workers);
      return kOk;
    }
    if (unl->parsed()) return report_unlearn(npo::cli::cmd_unlearn(cfg, opt.workers));
    if (sweep->parsed()) {
      const auto s = npo::cli::cmd_sweep(cfg, opt.workers);
      for (const auto& [name, rep] : s.reports) {
        std::printf("%-8s best lr=%g beta=%g\n", name.c_str(), rep.best_cell().lr, rep.best_cell().beta);
      }
      return kOk;
    }
    if (th->parsed()) return report_theory(npo::cli::cmd_theory(cfg));
    if (all->parsed()) {
      npo::cli::cmd_generate(cfg);
      npo::cli::cmd_train(cfg, opt.workers);
      const int u = report_unlearn(npo::cli::cmd_unlearn(cfg, opt.workers));
      if (cfg.sweep) npo::cli::cmd_sweep(cfg, opt.workers);
      const int t = report_theory(npo::cli::cmd_theory(cfg));
      return u != kOk ? u : t;
    }
  } catch (const npo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const npo::DivergenceError& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << "\n";
    return kDivergence;
  } catch (const npo::TheoryViolation& e) {
    std::cerr << "theory check failed: " << e.what() << "\n";
    return kTheory;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
