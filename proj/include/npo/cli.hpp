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

#pragma once

// Experiment pipeline behind the npo_unlearn tool: a versioned JSON config,
// the per-command drivers (generate, train, unlearn, sweep, theory) and the
// fixed on-disk layout they share.
//
// Layout under <output_dir>/run-<hash>/ (hash = FNV-1a of the canonical
// config without output_dir, so different configs never share a directory):
//
//   config.json
//   data/seed-<s>/{forget,retain}.csv + .meta.json
//   models/seed-<s>/{reference,retrained}.ckpt, train_summary.json
//   unlearn/<method>/seed-<s>.csv, mean_curve.csv, pareto.csv
//   unlearn/summary.json
//   sweep/<method>.json
//   theory/trajectory.csv, theory/report.json

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "npo/data.hpp"
#include "npo/errors.hpp"
#include "npo/io.hpp"
#include "npo/metrics.hpp"
#include "npo/model.hpp"
#include "npo/objectives.hpp"
#include "npo/parallel.hpp"
#include "npo/rng.hpp"
#include "npo/theory.hpp"
#include "npo/trainer.hpp"

namespace npo::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Config

struct SweepConfig {
  std::vector<double> lr_grid;
  std::vector<double> beta_grid;  // empty: the method's own beta only
  std::optional<double> retain_cap;
  std::size_t seed_index = 0;  // which entry of `seeds` the sweep runs on
};

struct TheoryConfig {
  int n_f = 50;
  int d = 64;
  double c_offdiag = 0.05;
  std::uint64_t seed = 0;
  int steps = 2000;
  double lr_ga = 0.1;
  double lr_npo = 0.5;
  double beta = 1.0;
  bool cross_check = true;
  int cross_check_steps = 50;
  double cross_check_tol = 1e-8;
};

struct ExperimentConfig {
  double alpha = 1.0;
  int d = 16;
  int width = 128;
  int n_forget = 200;
  int n_retain = 1000;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> methods = {"NPO", "NPO+RT", "GA", "GA+RT", "IDK+RT", "DPO+RT"};
  // Per-method coefficient overrides layered on the preset; a name that is
  // not a preset defines a custom method from scratch.
  std::map<std::string, std::map<std::string, double>> weights;
  std::optional<double> lr;    // overrides every method's lr
  std::optional<double> beta;  // overrides every method's beta
  int steps = 2000;
  int log_every = 10;
  int fit_steps = 20000;
  double fit_lr = 0.05;
  std::string output_dir = "runs";
  std::optional<SweepConfig> sweep;
  TheoryConfig theory;

  void validate() const;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

template <class T>
void get_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  get_if(j, key, v);
  out = v;
}

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["alpha"] = c.alpha;
  j["d"] = c.d;
  j["width"] = c.width;
  j["n_forget"] = c.n_forget;
  j["n_retain"] = c.n_retain;
  j["seeds"] = c.seeds;
  j["methods"] = c.methods;
  json w = json::object();
  for (const auto& [m, terms] : c.weights) {
    json t = json::object();
    for (const auto& [k, v] : terms) t[k] = v;
    w[m] = t;
  }
  j["weights"] = w;
  j["lr"] = detail::opt_json(c.lr);
  j["beta"] = detail::opt_json(c.beta);
  j["steps"] = c.steps;
  j["log_every"] = c.log_every;
  j["fit_steps"] = c.fit_steps;
  j["fit_lr"] = c.fit_lr;
  j["output_dir"] = c.output_dir;
  if (c.sweep) {
    j["sweep"] = {{"lr_grid", c.sweep->lr_grid},
                  {"beta_grid", c.sweep->beta_grid},
                  {"retain_cap", detail::opt_json(c.sweep->retain_cap)},
                  {"seed_index", c.sweep->seed_index}};
  } else {
    j["sweep"] = nullptr;
  }
  const TheoryConfig& t = c.theory;
  j["theory"] = {{"n_f", t.n_f},
                 {"d", t.d},
                 {"c_offdiag", t.c_offdiag},
                 {"seed", t.seed},
                 {"steps", t.steps},
                 {"lr_ga", t.lr_ga},
                 {"lr_npo", t.lr_npo},
                 {"beta", t.beta},
                 {"cross_check", t.cross_check},
                 {"cross_check_steps", t.cross_check_steps},
                 {"cross_check_tol", t.cross_check_tol}};
  return j;
}

/// Parses a config document. Missing keys keep their defaults; unknown keys
/// and a missing or foreign schema_version are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  detail::reject_unknown(j,
                         {"schema_version", "alpha", "d", "width", "n_forget", "n_retain", "seeds", "methods",
                          "weights", "lr", "beta", "steps", "log_every", "fit_steps", "fit_lr", "output_dir",
                          "sweep", "theory"},
                         "config");
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  int version = 0;
  detail::get_if(j, "schema_version", version);
  if (version != kSchemaVersion) {
    throw ConfigError("config: schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }

  ExperimentConfig c;
  detail::get_if(j, "alpha", c.alpha);
  detail::get_if(j, "d", c.d);
  detail::get_if(j, "width", c.width);
  detail::get_if(j, "n_forget", c.n_forget);
  detail::get_if(j, "n_retain", c.n_retain);
  detail::get_if(j, "seeds", c.seeds);
  detail::get_if(j, "methods", c.methods);
  detail::get_if(j, "weights", c.weights);
  detail::get_opt(j, "lr", c.lr);
  detail::get_opt(j, "beta", c.beta);
  detail::get_if(j, "steps", c.steps);
  detail::get_if(j, "log_every", c.log_every);
  detail::get_if(j, "fit_steps", c.fit_steps);
  detail::get_if(j, "fit_lr", c.fit_lr);
  detail::get_if(j, "output_dir", c.output_dir);
  if (j.contains("sweep") && !j.at("sweep").is_null()) {
    const auto& s = j.at("sweep");
    if (!s.is_object()) throw ConfigError("config: sweep must be an object");
    detail::reject_unknown(s, {"lr_grid", "beta_grid", "retain_cap", "seed_index"}, "sweep");
    SweepConfig sc;
    detail::get_if(s, "lr_grid", sc.lr_grid);
    detail::get_if(s, "beta_grid", sc.beta_grid);
    detail::get_opt(s, "retain_cap", sc.retain_cap);
    detail::get_if(s, "seed_index", sc.seed_index);
    c.sweep = sc;
  }
  if (j.contains("theory")) {
    const auto& t = j.at("theory");
    if (!t.is_object()) throw ConfigError("config: theory must be an object");
    detail::reject_unknown(t,
                           {"n_f", "d", "c_offdiag", "seed", "steps", "lr_ga", "lr_npo", "beta", "cross_check",
                            "cross_check_steps", "cross_check_tol"},
                           "theory");
    TheoryConfig& tc = c.theory;
    detail::get_if(t, "n_f", tc.n_f);
    detail::get_if(t, "d", tc.d);
    detail::get_if(t, "c_offdiag", tc.c_offdiag);
    detail::get_if(t, "seed", tc.seed);
    detail::get_if(t, "steps", tc.steps);
    detail::get_if(t, "lr_ga", tc.lr_ga);
    detail::get_if(t, "lr_npo", tc.lr_npo);
    detail::get_if(t, "beta", tc.beta);
    detail::get_if(t, "cross_check", tc.cross_check);
    detail::get_if(t, "cross_check_steps", tc.cross_check_steps);
    detail::get_if(t, "cross_check_tol", tc.cross_check_tol);
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text);
}

/// Stable identity of everything that affects results (output_dir excluded).
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(::npo::detail::fnv1a(j.dump())));
  return buf;
}

inline fs::path run_dir(const ExperimentConfig& c) { return fs::path(c.output_dir) / ("run-" + config_hash(c)); }

// ---------------------------------------------------------------------------
// Method hyper-parameters

struct Hyper {
  double lr = 0.0;
  double beta = 1.0;
};

/// Learning rate and beta for a named method at alpha in {0, 1}. The GA
/// family (and RT/GA+KL) share one row, NPO-style methods another, DPO-style
/// a third; KTO borrows the NPO learning rate with beta = 0.1.
inline std::optional<Hyper> preset_hyper(std::string_view method, double alpha) {
  const bool a1 = alpha == 1.0;
  if (!a1 && alpha != 0.0) return std::nullopt;
  if (method == "GA" || method == "GA+RT" || method == "IDK+RT" || method == "GA+KL" || method == "RT") {
    return Hyper{a1 ? 5e-4 : 1e-4, 1.0};
  }
  if (method == "NPO" || method == "NPO+RT") return Hyper{a1 ? 5e-3 : 5e-2, a1 ? 1.0 : 10.0};
  if (method == "DPO+RT" || method == "DPO+KL") return Hyper{a1 ? 5e-3 : 5e-2, a1 ? 0.1 : 5.0};
  if (method == "KTO" || method == "KTO+RT") return Hyper{a1 ? 5e-3 : 5e-2, 0.1};
  return std::nullopt;
}

struct MethodSetting {
  std::string name;
  Weights weights;
  double lr = 0.0;
  double beta = 1.0;
};

inline bool is_preset(const std::string& name) {
  for (const auto& p : preset_names()) {
    if (p == name) return true;
  }
  return false;
}

inline MethodSetting resolve_method(const ExperimentConfig& c, const std::string& name) {
  MethodSetting m;
  m.name = name;
  const auto over = c.weights.find(name);
  if (is_preset(name)) {
    m.weights = preset_weights(name);
  } else if (over == c.weights.end()) {
    throw ConfigError("method '" + name + "' is neither a preset nor defined under 'weights'");
  }
  if (over != c.weights.end()) {
    for (const auto& [term, v] : over->second) m.weights[term_from_string(term)] = v;
  }
  const auto h = preset_hyper(name, c.alpha);
  if (c.lr) {
    m.lr = *c.lr;
  } else if (h) {
    m.lr = h->lr;
  } else {
    throw ConfigError("method '" + name + "': no preset learning rate at alpha=" + io::format_double(c.alpha) +
                      "; set 'lr'");
  }
  if (c.beta) {
    m.beta = *c.beta;
  } else if (h) {
    m.beta = h->beta;
  } else if (m.weights.npo > 0 || m.weights.dpo > 0 || m.weights.kto > 0) {
    throw ConfigError("method '" + name + "': no preset beta at alpha=" + io::format_double(c.alpha) +
                      "; set 'beta'");
  }
  return m;
}

inline void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("config: " + msg);
  };
  need(std::isfinite(alpha), "alpha must be finite");
  need(d >= 1, "d must be >= 1");
  need(width >= 1, "width must be >= 1");
  need(n_forget >= 1 && n_retain >= 1, "n_forget and n_retain must be >= 1");
  need(!seeds.empty(), "seeds must be nonempty");
  need(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
  need(!methods.empty(), "methods must be nonempty");
  need(std::set<std::string>(methods.begin(), methods.end()).size() == methods.size(),
       "methods must be distinct");
  for (const auto& [m, terms] : weights) {
    for (const auto& [t, v] : terms) {
      term_from_string(t);
      need(std::isfinite(v) && v >= 0.0, "weight '" + m + "." + t + "' must be finite and >= 0");
    }
  }
  need(!lr || (std::isfinite(*lr) && *lr >= 0.0), "lr must be finite and >= 0");
  need(!beta || (std::isfinite(*beta) && *beta > 0.0), "beta must be finite and > 0");
  need(steps >= 0, "steps must be >= 0");
  need(log_every >= 1, "log_every must be >= 1");
  need(fit_steps >= 0, "fit_steps must be >= 0");
  need(std::isfinite(fit_lr) && fit_lr >= 0.0, "fit_lr must be finite and >= 0");
  need(!output_dir.empty(), "output_dir must be nonempty");
  for (const auto& m : methods) {
    const MethodSetting s = resolve_method(*this, m);
    const auto w = s.weights.as_array();
    bool any = false;
    for (double v : w) any = any || v > 0;
    need(any, "method '" + m + "' has no active term");
  }
  if (sweep) {
    need(!sweep->lr_grid.empty(), "sweep.lr_grid must be nonempty");
    for (double v : sweep->lr_grid) need(std::isfinite(v) && v >= 0.0, "sweep.lr_grid entries must be >= 0");
    for (double v : sweep->beta_grid) need(std::isfinite(v) && v > 0.0, "sweep.beta_grid entries must be > 0");
    need(sweep->seed_index < seeds.size(), "sweep.seed_index out of range");
  }
  need(theory.n_f >= 1 && theory.d >= theory.n_f, "theory needs 1 <= n_f <= d");
  need(theory.c_offdiag > 0 && theory.c_offdiag < 1, "theory.c_offdiag must be in (0, 1)");
  need(theory.steps >= 0, "theory.steps must be >= 0");
  need(theory.lr_ga > 0 && theory.lr_npo > 0, "theory learning rates must be > 0");
  need(theory.beta > 0, "theory.beta must be > 0");
  need(theory.cross_check_steps >= 0, "theory.cross_check_steps must be >= 0");
  need(theory.cross_check_tol > 0, "theory.cross_check_tol must be > 0");
}

// ---------------------------------------------------------------------------
// Paths

inline std::string seed_tag(std::uint64_t s) { return "seed-" + std::to_string(s); }
inline fs::path data_stem(const fs::path& run, std::uint64_t s, Split split) {
  return run / "data" / seed_tag(s) / to_string(split);
}
inline fs::path model_dir(const fs::path& run, std::uint64_t s) { return run / "models" / seed_tag(s); }
inline fs::path method_dir(const fs::path& run, const std::string& m) { return run / "unlearn" / m; }

inline void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline void write_config_snapshot(const ExperimentConfig& c) { write_json(run_dir(c) / "config.json", to_json(c)); }

// ---------------------------------------------------------------------------
// generate

inline std::vector<fs::path> cmd_generate(const ExperimentConfig& c) {
  c.validate();
  const fs::path run = run_dir(c);
  write_config_snapshot(c);
  std::vector<fs::path> written;
  for (std::uint64_t s : c.seeds) {
    const auto [forget, retain] = generate_pair(c.alpha, c.d, c.n_forget, c.n_retain, s);
    save_dataset(forget, data_stem(run, s, Split::Forget), c.n_forget, c.n_retain);
    save_dataset(retain, data_stem(run, s, Split::Retain), c.n_forget, c.n_retain);
    written.push_back(data_stem(run, s, Split::Forget));
    written.push_back(data_stem(run, s, Split::Retain));
  }
  return written;
}

// ---------------------------------------------------------------------------
// train

struct SeedArtifacts {
  std::uint64_t seed = 0;
  Dataset forget;
  Dataset retain;
  std::optional<RandomFeatureModel> reference;
  std::optional<RandomFeatureModel> retrained;
};

inline SeedArtifacts load_data(const ExperimentConfig& c, std::uint64_t s) {
  const fs::path run = run_dir(c);
  SeedArtifacts a;
  a.seed = s;
  try {
    a.forget = load_dataset(data_stem(run, s, Split::Forget));
    a.retain = load_dataset(data_stem(run, s, Split::Retain));
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " (run 'generate' first)");
  }
  return a;
}

inline SeedArtifacts load_artifacts(const ExperimentConfig& c, std::uint64_t s) {
  SeedArtifacts a = load_data(c, s);
  const fs::path dir = model_dir(run_dir(c), s);
  try {
    a.reference = random_feature_from_checkpoint(io::read_file(dir / "reference.ckpt"));
    a.retrained = random_feature_from_checkpoint(io::read_file(dir / "retrained.ckpt"));
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + " (run 'train' first)");
  }
  return a;
}

/// Fits pi_ref on D_FG u D_RT and pi_retr on D_RT (same frozen features,
/// W seed = data seed) and writes checkpoints plus a training summary.
inline void cmd_train(const ExperimentConfig& c, std::size_t workers = 1) {
  c.validate();
  write_config_snapshot(c);
  const fs::path run = run_dir(c);
  const FitConfig fit{c.fit_steps, c.fit_lr};
  parallel_for(c.seeds.size(), workers, [&](std::size_t k) {
    const std::uint64_t s = c.seeds[k];
    SeedArtifacts a = load_data(c, s);
    FitSummary ref_sum, retr_sum;
    RandomFeatureModel ref = fit_initial(a.forget, a.retain, c.width, s, fit, &ref_sum);
    RandomFeatureModel retr = fit_retrained(a.retain, ref.shared_features(), ref, fit, &retr_sum);
    const fs::path dir = model_dir(run, s);
    save_checkpoint(ref, dir / "reference.ckpt");
    save_checkpoint(retr, dir / "retrained.ckpt");
    const double rt_ref = rt_loss(ref, a.retain).value;
    const double rt_retr = rt_loss(retr, a.retain).value;
    json j;
    j["seed"] = s;
    j["fit_steps"] = c.fit_steps;
    j["fit_lr"] = c.fit_lr;
    j["reference"] = {{"initial_loss", ref_sum.initial_loss}, {"final_loss", ref_sum.final_loss}, {"rt_loss", rt_ref}};
    j["retrained"] = {
        {"initial_loss", retr_sum.initial_loss}, {"final_loss", retr_sum.final_loss}, {"rt_loss", rt_retr}};
    j["retrained_rt_loss_le_reference"] = rt_retr <= rt_ref;
    write_json(dir / "train_summary.json", j);
  });
}

// ---------------------------------------------------------------------------
// unlearn

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  double lr = 0.0;
  double beta = 0.0;
  bool ok = false;
  std::string error;
  std::optional<long> diverged_at;
  TrajectoryLog log;  // partial when the run diverged
};

/// One unlearning run from pi_ref with distances measured against pi_retr.
inline RunResult run_unlearning(const ExperimentConfig& c, const SeedArtifacts& a, const MethodSetting& m) {
  RunResult r;
  r.method = m.name;
  r.seed = a.seed;
  r.lr = m.lr;
  r.beta = m.beta;
  const RandomFeatureModel& ref = *a.reference;
  const Evaluator ev = Evaluator::for_models(ref, &*a.retrained, a.forget, &a.retain);
  ObjectiveSpec<RandomFeatureModel> spec{m.weights, m.beta, Reference<RandomFeatureModel>(ref),
                                         bern_half_targets(a.forget, a.seed)};
  TrainConfig<RandomFeatureModel> cfg{c.steps, m.lr, spec, c.log_every, a.seed};
  try {
    r.log = unlearn(ref, cfg, a.forget, &a.retain, ev);
    r.ok = true;
  } catch (const UnlearnDivergence& e) {
    r.error = e.what();
    r.diverged_at = static_cast<long>(e.step());
    r.log = e.partial_log();
  } catch (const DivergenceError& e) {
    r.error = e.what();
    r.diverged_at = static_cast<long>(e.step());
  }
  return r;
}

struct MethodAggregate {
  std::string method;
  std::vector<CurvePoint> mean_curve;
  std::vector<ParetoPoint> frontier;
  int n_seeds = 0;
};

struct UnlearnOutcome {
  std::vector<RunResult> runs;  // method-major, seed-minor
  std::vector<MethodAggregate> methods;
  bool all_ok() const {
    for (const auto& r : runs) {
      if (!r.ok) return false;
    }
    return true;
  }
};

inline json summary_json(const TrajectoryLog& log) {
  const TrajectorySummary s = summarize(log);
  return {{"final_loss", number_or_null(s.final_loss)},
          {"final_forget_distance", number_or_null(s.final_forget_distance)},
          {"final_retain_distance", number_or_null(s.final_retain_distance)},
          {"final_forget_kl", number_or_null(s.final_forget_kl)},
          {"final_divergence_norm", number_or_null(s.final_divergence_norm)},
          {"min_forget_distance", number_or_null(s.min_forget_distance)},
          {"argmin_forget_step", s.argmin_forget_step}};
}

/// Runs every (method, seed) pair. A failing run is recorded and does not
/// stop its siblings; aggregates average the seeds that finished.
inline UnlearnOutcome cmd_unlearn(const ExperimentConfig& c, std::size_t workers = 1) {
  c.validate();
  write_config_snapshot(c);
  const fs::path run = run_dir(c);

  std::vector<SeedArtifacts> seeds;
  seeds.reserve(c.seeds.size());
  for (std::uint64_t s : c.seeds) seeds.push_back(load_artifacts(c, s));
  std::vector<MethodSetting> settings;
  for (const auto& m : c.methods) settings.push_back(resolve_method(c, m));

  UnlearnOutcome out;
  out.runs.resize(settings.size() * seeds.size());
  parallel_for(out.runs.size(), workers, [&](std::size_t k) {
    const MethodSetting& m = settings[k / seeds.size()];
    const SeedArtifacts& a = seeds[k % seeds.size()];
    out.runs[k] = run_unlearning(c, a, m);
    io::write_file_atomic(method_dir(run, m.name) / (seed_tag(a.seed) + ".csv"), trajectory_csv(out.runs[k].log));
  });

  json summary;
  summary["config_hash"] = config_hash(c);
  summary["alpha"] = c.alpha;
  summary["steps"] = c.steps;
  // pi_ref vs pi_retr, averaged over seeds (the step-0 distances of any run).
  {
    double f = 0, r = 0;
    int n = 0;
    for (const auto& rr : out.runs) {
      if (rr.method != settings.front().name || rr.log.records.empty()) continue;
      f += rr.log.records.front().metrics.forget_distance;
      r += rr.log.records.front().metrics.retain_distance;
      ++n;
    }
    summary["baseline"] = n ? json{{"forget_distance", f / n}, {"retain_distance", r / n}, {"n_seeds", n}}
                            : json(nullptr);
  }
  json methods = json::array();
  for (std::size_t mi = 0; mi < settings.size(); ++mi) {
    const MethodSetting& m = settings[mi];
    MethodAggregate agg;
    agg.method = m.name;
    std::vector<std::vector<CurvePoint>> curves;
    json runs = json::array();
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const RunResult& rr = out.runs[mi * seeds.size() + si];
      json jr;
      jr["seed"] = rr.seed;
      jr["status"] = rr.ok ? "ok" : "diverged";
      if (!rr.ok) {
        jr["error"] = rr.error;
        jr["diverged_at"] = rr.diverged_at ? json(*rr.diverged_at) : json(nullptr);
      }
      jr["summary"] = rr.log.records.empty() ? json(nullptr) : summary_json(rr.log);
      runs.push_back(jr);
      if (rr.ok) curves.push_back(rr.log.curve());
    }
    agg.n_seeds = static_cast<int>(curves.size());
    agg.mean_curve = average_curves(curves);
    agg.frontier = pareto_frontier(curve_to_points(agg.mean_curve, m.name));
    io::write_file_atomic(method_dir(run, m.name) / "mean_curve.csv", curve_csv(agg.mean_curve));
    io::write_file_atomic(method_dir(run, m.name) / "pareto.csv", frontier_csv(agg.frontier, agg.n_seeds));
    json jm;
    jm["method"] = m.name;
    jm["lr"] = m.lr;
    jm["beta"] = m.beta;
    json jw = json::object();
    const auto w = m.weights.as_array();
    for (std::size_t t = 0; t < kTermCount; ++t) {
      if (w[t] > 0) jw[std::string(kTermNames[t])] = w[t];
    }
    jm["weights"] = jw;
    jm["n_finished"] = agg.n_seeds;
    jm["runs"] = runs;
    methods.push_back(jm);
    out.methods.push_back(std::move(agg));
  }
  summary["methods"] = methods;
  write_json(run / "unlearn" / "summary.json", summary);
  return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOutcome {
  std::vector<std::pair<std::string, GridReport>> reports;
};

/// lr x beta grid search per method on one seed. Methods without an
/// NPO/DPO/KTO term ignore the beta grid.
inline SweepOutcome cmd_sweep(const ExperimentConfig& c, std::size_t workers = 1) {
  c.validate();
  if (!c.sweep) throw ConfigError("sweep: config has no 'sweep' section");
  write_config_snapshot(c);
  const fs::path run = run_dir(c);
  const SweepConfig& sc = *c.sweep;
  const SeedArtifacts a = load_artifacts(c, c.seeds[sc.seed_index]);
  SweepOutcome out;
  for (const auto& name : c.methods) {
    const MethodSetting base = resolve_method(c, name);
    const bool uses_beta = base.weights.npo > 0 || base.weights.dpo > 0 || base.weights.kto > 0;
    const std::vector<double> betas =
        uses_beta && !sc.beta_grid.empty() ? sc.beta_grid : std::vector<double>{base.beta};
    const CellRunner runner = [&](double lr, double beta) {
      MethodSetting m = base;
      m.lr = lr;
      m.beta = beta;
      RunResult r = run_unlearning(c, a, m);
      if (!r.ok) throw DivergenceError(r.error, r.diverged_at ? static_cast<std::size_t>(*r.diverged_at) : 0);
      return r.log;
    };
    GridReport rep = grid_search(sc.lr_grid, betas, runner, sc.retain_cap, workers);
    json j;
    j["method"] = name;
    j["seed"] = a.seed;
    j["retain_cap"] = rep.retain_cap;
    json cells = json::array();
    for (const auto& cell : rep.cells) {
      json jc{{"lr", cell.lr},
              {"beta", cell.beta},
              {"status", to_string(cell.status)},
              {"final_forget_distance", number_or_null(cell.final_forget_distance)},
              {"final_retain_distance", number_or_null(cell.final_retain_distance)}};
      if (!cell.error.empty()) jc["error"] = cell.error;
      cells.push_back(jc);
    }
    j["cells"] = cells;
    j["best"] = {{"lr", rep.best_cell().lr}, {"beta", rep.best_cell().beta}};
    write_json(run / "sweep" / (name + ".json"), j);
    out.reports.emplace_back(name, std::move(rep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// theory

struct TheoryOutcome {
  bool passed = true;
  std::vector<std::string> failures;
  std::optional<theory::RateReport> ga_fit;
  std::optional<theory::RateReport> npo_fit;
  std::optional<theory::EnvelopeReport> ga_envelope;
  std::optional<theory::EnvelopeReport> npo_envelope;
  double cross_check_max_rel_error = 0.0;
  json report;
};

inline json rate_json(const std::optional<theory::RateReport>& r, const std::string& skip_reason) {
  if (!r) return {{"skipped", true}, {"reason", skip_reason}};
  return {{"skipped", false},
          {"t_start", r->t_start},
          {"t_end", r->t_end},
          {"linear", {{"slope", r->linear.slope}, {"intercept", r->linear.intercept}, {"r2", r->linear.r2}}},
          {"logarithmic",
           {{"scale", r->logarithmic.scale},
            {"c", r->logarithmic.c},
            {"intercept", r->logarithmic.intercept},
            {"r2", r->logarithmic.r2}}},
          {"winner", r->winner()}};
}

inline json envelope_json(const std::optional<theory::EnvelopeReport>& e, const std::string& error) {
  if (!e) return {{"ok", false}, {"error", error}};
  json j{{"ok", true},
         {"vacuous", e->vacuous},
         {"sign_pattern_ok", e->sign_pattern_ok},
         {"monotone_ok", e->monotone_ok},
         {"lower", e->lower},
         {"upper", e->upper},
         {"lower_first_half", e->lower_first_half},
         {"upper_first_half", e->upper_first_half},
         {"extrapolation_ok", e->extrapolation_ok}};
  if (e->method == theory::Method::GA) {
    j["c3"] = e->c3;
    j["increments_ok"] = e->increments_ok;
  } else {
    j["c5"] = e->c5;
    j["c6"] = e->c6;
  }
  return j;
}

/// Design -> GA and NPO coordinate runs -> rate fits -> envelope checks, plus
/// an optional coordinate-vs-parameter-space cross-check. `passed` is false
/// when any check that ran disagrees with the expected behaviour; fits on
/// too-short runs are skipped rather than failed.
inline TheoryOutcome cmd_theory(const ExperimentConfig& c) {
  c.validate();
  write_config_snapshot(c);
  const fs::path dir = run_dir(c) / "theory";
  const TheoryConfig& t = c.theory;
  TheoryOutcome out;
  auto fail = [&](const std::string& why) {
    out.passed = false;
    out.failures.push_back(why);
  };

  const theory::TheoryDesign des = theory::make_design(t.n_f, t.d, t.c_offdiag, t.seed);
  const auto ga = theory::run_coordinates(des, theory::Method::GA, t.steps, t.lr_ga);
  const auto npo = theory::run_coordinates(des, theory::Method::NPO, t.steps, t.lr_npo, t.beta);
  const Vector ga_norms = ga.norms();
  const Vector npo_norms = npo.norms();

  std::string ga_skip, npo_skip;
  try {
    out.ga_fit = theory::fit_rates(ga_norms);
  } catch (const FitError& e) {
    ga_skip = e.what();
  }
  try {
    out.npo_fit = theory::fit_rates(npo_norms);
  } catch (const FitError& e) {
    npo_skip = e.what();
  }
  if (out.ga_fit && !out.ga_fit->linear_wins()) fail("GA norm is not best fit by the linear model");
  if (out.npo_fit && out.npo_fit->linear_wins()) fail("NPO norm is not best fit by the logarithmic model");

  std::string ga_env_err, npo_env_err;
  try {
    out.ga_envelope = theory::check_lemma_envelopes(ga, des);
  } catch (const TheoryViolation& e) {
    ga_env_err = e.what();
    fail(std::string("GA envelope: ") + e.what());
  }
  try {
    out.npo_envelope = theory::check_lemma_envelopes(npo, des);
  } catch (const TheoryViolation& e) {
    npo_env_err = e.what();
    fail(std::string("NPO envelope: ") + e.what());
  }

  json cross = nullptr;
  if (t.cross_check) {
    const int n = std::min(t.cross_check_steps, t.steps);
    double worst = 0.0;
    for (auto [method, lr] : {std::pair{theory::Method::GA, t.lr_ga}, std::pair{theory::Method::NPO, t.lr_npo}}) {
      const Vector coord = theory::run_coordinates(des, method, n, lr, t.beta).norms();
      const Vector param = theory::parameter_space_norms(des, method, n, lr, t.beta);
      for (Eigen::Index i = 1; i < coord.size(); ++i) {
        worst = std::max(worst, std::abs(coord(i) - param(i)) / std::max(std::abs(coord(i)), 1e-300));
      }
    }
    out.cross_check_max_rel_error = worst;
    const bool ok = worst <= t.cross_check_tol;
    if (!ok) fail("coordinate and parameter-space norms disagree");
    cross = {{"steps", n}, {"max_rel_error", worst}, {"tolerance", t.cross_check_tol}, {"ok", ok}};
  }

  std::string csv = "t,ga_norm,npo_norm\n";
  for (Eigen::Index i = 0; i < ga_norms.size(); ++i) {
    csv += std::to_string(i) + "," + io::format_double(ga_norms(i)) + "," + io::format_double(npo_norms(i)) + "\n";
  }
  io::write_file_atomic(dir / "trajectory.csv", csv);

  json r;
  r["design"] = {{"n_f", t.n_f},
                 {"d", t.d},
                 {"c_offdiag", t.c_offdiag},
                 {"max_offdiag", theory::max_offdiag(des.Gamma)},
                 {"seed", t.seed}};
  r["steps"] = t.steps;
  r["ga"] = {{"lr0", t.lr_ga},
             {"fit", rate_json(out.ga_fit, ga_skip)},
             {"envelope", envelope_json(out.ga_envelope, ga_env_err)}};
  r["npo"] = {{"lr0", t.lr_npo},
              {"beta", t.beta},
              {"fit", rate_json(out.npo_fit, npo_skip)},
              {"envelope", envelope_json(out.npo_envelope, npo_env_err)}};
  r["cross_check"] = cross;
  r["passed"] = out.passed;
  r["failures"] = out.failures;
  write_json(dir / "report.json", r);
  out.report = std::move(r);
  return out;
}

}  // namespace npo::cli
