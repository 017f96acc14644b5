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

// Full-batch gradient descent: supervised fitting of the initial and
// retrained models, logged unlearning trajectories, and the lr x beta grid
// search used to pick unlearning hyper-parameters.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "npo/errors.hpp"
#include "npo/io.hpp"
#include "npo/metrics.hpp"
#include "npo/model.hpp"
#include "npo/objectives.hpp"
#include "npo/parallel.hpp"

namespace npo {

struct FitConfig {
  int steps = 20000;
  double lr = 0.05;

  void validate() const {
    if (steps < 0) throw ConfigError("FitConfig: steps must be >= 0");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("FitConfig: lr must be finite and >= 0");
  }
};

struct FitSummary {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps = 0;
};

/// Gradient descent on the mean cross-entropy of `batch`, starting from `start`.
template <ParametricModel M>
M fit_cross_entropy(M start, const Batch& batch, const FitConfig& cfg, FitSummary* summary = nullptr) {
  cfg.validate();
  Vector theta = start.theta();
  double first = 0.0;
  double last = 0.0;
  for (int t = 0; t <= cfg.steps; ++t) {
    LossValue lv;
    try {
      lv = rt_loss(theta, batch);
    } catch (const DomainError&) {  // non-finite logits
      throw DivergenceError("fit_cross_entropy: non-finite logits", static_cast<std::size_t>(t));
    }
    if (!std::isfinite(lv.value) || !lv.grad.allFinite()) {
      throw DivergenceError("fit_cross_entropy: non-finite loss", static_cast<std::size_t>(t));
    }
    if (t == 0) first = lv.value;
    last = lv.value;
    if (t < cfg.steps) theta -= cfg.lr * lv.grad;
  }
  if (summary) *summary = FitSummary{first, last, cfg.steps};
  start.set_theta(std::move(theta));
  return start;
}

/// pi_ref: theta = 0, then descent on cross-entropy over D_FG u D_RT
/// with features ReLU(W x), W drawn from `w_seed`.
inline RandomFeatureModel fit_initial(const Dataset& forget, const Dataset& retain, int width,
                                      std::uint64_t w_seed, const FitConfig& cfg = {},
                                      FitSummary* summary = nullptr) {
  if (forget.dim() != retain.dim()) throw ShapeError("fit_initial: forget/retain dimensions differ");
  RandomFeatureModel model(RandomFeatures::make(static_cast<int>(forget.dim()), width, w_seed));
  const Batch batch = make_batch(model, concatenate(forget, retain));
  return fit_cross_entropy(std::move(model), batch, cfg, summary);
}

/// pi_retr: same protocol over D_RT only, sharing the initial model's frozen W.
inline RandomFeatureModel fit_retrained(const Dataset& retain, std::shared_ptr<const RandomFeatures> features,
                                        const RandomFeatureModel& initial, const FitConfig& cfg = {},
                                        FitSummary* summary = nullptr) {
  if (!features || !(*features == initial.random_features())) {
    throw PreconditionError("fit_retrained: frozen W differs from the initial model's W");
  }
  RandomFeatureModel model(std::move(features));
  const Batch batch = make_batch(model, retain);
  return fit_cross_entropy(std::move(model), batch, cfg, summary);
}

// ---------------------------------------------------------------------------
// Unlearning trajectories

template <ParametricModel M>
struct TrainConfig {
  int steps = 2000;
  double lr = 1e-3;
  ObjectiveSpec<M> objective;
  int log_every = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 0) throw ConfigError("TrainConfig: steps must be >= 0");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("TrainConfig: lr must be finite and >= 0");
    if (log_every < 1) throw ConfigError("TrainConfig: log_every must be >= 1");
    objective.validate();
  }
};

struct TrajectoryRecord {
  long step = 0;
  double loss = 0.0;
  MetricRecord metrics;
  std::array<double, kTermCount> terms{};
};

struct TrajectoryLog {
  std::vector<TrajectoryRecord> records;
  Vector final_theta;

  const TrajectoryRecord& at_step(long step) const {
    for (const auto& r : records) {
      if (r.step == step) return r;
    }
    throw ConfigError("TrajectoryLog: step " + std::to_string(step) + " was not logged");
  }

  std::vector<CurvePoint> curve() const {
    std::vector<CurvePoint> c;
    c.reserve(records.size());
    for (const auto& r : records) c.push_back({r.step, r.metrics.forget_distance, r.metrics.retain_distance, 1});
    return c;
  }
};

/// Divergence during unlearning; carries everything logged before the failure.
class UnlearnDivergence : public DivergenceError {
 public:
  UnlearnDivergence(const std::string& what, std::size_t step, TrajectoryLog partial)
      : DivergenceError(what, step), partial_(std::move(partial)) {}

  const TrajectoryLog& partial_log() const { return partial_; }

 private:
  TrajectoryLog partial_;
};

/// Descent from an arbitrary parameter vector. Metrics are evaluated on the
/// pre-update parameters at step 0, every `log_every` steps, and at the last step.
template <ParametricModel M>
TrajectoryLog run_descent(const Vector& theta0, int steps, double lr, int log_every,
                          const CompositeObjective<M>& objective, const Evaluator& evaluator) {
  if (steps < 0 || log_every < 1 || !(lr >= 0.0)) throw ConfigError("run_descent: invalid steps/lr/log_every");
  TrajectoryLog log;
  Vector theta = theta0;
  for (int t = 0; t <= steps; ++t) {
    CompositeValue cv;
    try {
      cv = objective.evaluate(theta);
    } catch (const DomainError&) {  // non-finite logits
      log.final_theta = theta;
      throw UnlearnDivergence("unlearn: non-finite logits", static_cast<std::size_t>(t), std::move(log));
    }
    if (!std::isfinite(cv.value) || !cv.grad.allFinite()) {
      log.final_theta = theta;
      throw UnlearnDivergence("unlearn: non-finite objective", static_cast<std::size_t>(t), std::move(log));
    }
    if (t % log_every == 0 || t == steps) {
      TrajectoryRecord rec;
      rec.step = t;
      rec.loss = cv.value;
      try {
        rec.metrics = evaluator.evaluate(theta);
      } catch (const DomainError&) {
        log.final_theta = theta;
        throw UnlearnDivergence("unlearn: non-finite metric", static_cast<std::size_t>(t), std::move(log));
      }
      rec.terms = cv.terms;
      if (!std::isfinite(rec.metrics.forget_kl) || !std::isfinite(rec.metrics.divergence_norm)) {
        log.final_theta = theta;
        throw UnlearnDivergence("unlearn: non-finite metric", static_cast<std::size_t>(t), std::move(log));
      }
      log.records.push_back(rec);
    }
    if (t < steps) theta -= lr * cv.grad;
  }
  log.final_theta = std::move(theta);
  return log;
}

/// Unlearning from the reference model the objective was built around.
template <ParametricModel M>
TrajectoryLog unlearn(const M& start, const TrainConfig<M>& cfg, const CompositeObjective<M>& objective,
                      const Evaluator& evaluator) {
  cfg.validate();
  if (start.theta().size() != objective.spec().reference.theta().size() ||
      start.theta() != objective.spec().reference.theta()) {
    throw ConfigError("unlearn: start model differs from the objective's reference snapshot");
  }
  return run_descent<M>(start.theta(), cfg.steps, cfg.lr, cfg.log_every, objective, evaluator);
}

template <ParametricModel M>
TrajectoryLog unlearn(const M& start, const TrainConfig<M>& cfg, const Dataset& forget, const Dataset* retain,
                      const Evaluator& evaluator) {
  const CompositeObjective<M> objective(cfg.objective, start, &forget, retain);
  return unlearn(start, cfg, objective, evaluator);
}

// ---------------------------------------------------------------------------
// Trajectory CSV + summary

inline std::string trajectory_csv(const TrajectoryLog& log) {
  std::string out = "step,loss,forget_distance,retain_distance,forget_kl,divergence_norm";
  for (auto name : kTermNames) {
    out += ",";
    out += name;
  }
  out += "\n";
  auto num = [](double v) { return std::isnan(v) ? std::string() : io::format_double(v); };
  for (const auto& r : log.records) {
    out += std::to_string(r.step) + "," + num(r.loss) + "," + num(r.metrics.forget_distance) + "," +
           num(r.metrics.retain_distance) + "," + num(r.metrics.forget_kl) + "," + num(r.metrics.divergence_norm);
    for (double v : r.terms) out += "," + num(v);
    out += "\n";
  }
  return out;
}

struct TrajectorySummary {
  double final_loss = 0.0;
  double final_forget_distance = 0.0;
  double final_retain_distance = 0.0;
  double final_forget_kl = 0.0;
  double final_divergence_norm = 0.0;
  double min_forget_distance = std::numeric_limits<double>::infinity();
  long argmin_forget_step = 0;
};

inline TrajectorySummary summarize(const TrajectoryLog& log) {
  if (log.records.empty()) throw ConfigError("summarize: empty trajectory");
  TrajectorySummary s;
  const auto& last = log.records.back();
  s.final_loss = last.loss;
  s.final_forget_distance = last.metrics.forget_distance;
  s.final_retain_distance = last.metrics.retain_distance;
  s.final_forget_kl = last.metrics.forget_kl;
  s.final_divergence_norm = last.metrics.divergence_norm;
  for (const auto& r : log.records) {
    if (r.metrics.forget_distance < s.min_forget_distance) {
      s.min_forget_distance = r.metrics.forget_distance;
      s.argmin_forget_step = r.step;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Grid search

enum class CellStatus { Ok, OverCap, Diverged };

inline const char* to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Ok: return "ok";
    case CellStatus::OverCap: return "over_cap";
    case CellStatus::Diverged: return "diverged";
  }
  return "unknown";
}

struct GridCell {
  double lr = 0.0;
  double beta = 0.0;
  CellStatus status = CellStatus::Ok;
  double final_forget_distance = std::numeric_limits<double>::quiet_NaN();
  double final_retain_distance = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

struct GridReport {
  std::vector<GridCell> cells;  // lr-major in grid order
  std::size_t best = 0;
  double retain_cap = 0.0;

  const GridCell& best_cell() const { return cells.at(best); }
};

/// Runs one grid cell; returns the trajectory or throws DivergenceError.
using CellRunner = std::function<TrajectoryLog(double lr, double beta)>;

/// Picks the cell minimizing the final forget distance among cells that did
/// not diverge and whose final retain distance is <= the cap. Ties go to the
/// smaller lr, then the smaller beta.
///
/// Without an explicit cap, cap = 2 * baseline + 0.5 where the baseline is the
/// step-0 retain distance (reference vs retrained) of the first finished cell.
inline GridReport grid_search(const std::vector<double>& lr_grid, const std::vector<double>& beta_grid,
                              const CellRunner& run_cell, std::optional<double> retain_cap = std::nullopt,
                              std::size_t workers = 1) {
  if (lr_grid.empty() || beta_grid.empty()) throw ConfigError("grid_search: grids must be nonempty");
  const std::size_t n = lr_grid.size() * beta_grid.size();
  std::vector<GridCell> cells(n);
  std::vector<std::optional<double>> baselines(n);
  parallel_for(n, workers, [&](std::size_t k) {
    GridCell& c = cells[k];
    c.lr = lr_grid[k / beta_grid.size()];
    c.beta = beta_grid[k % beta_grid.size()];
    try {
      const TrajectoryLog log = run_cell(c.lr, c.beta);
      if (log.records.empty()) throw ConfigError("grid_search: cell produced an empty trajectory");
      c.final_forget_distance = log.records.back().metrics.forget_distance;
      c.final_retain_distance = log.records.back().metrics.retain_distance;
      baselines[k] = log.records.front().metrics.retain_distance;
      if (!std::isfinite(c.final_forget_distance) || !std::isfinite(c.final_retain_distance)) {
        c.status = CellStatus::Diverged;
        c.error = "non-finite final distances";
      }
    } catch (const DivergenceError& e) {
      c.status = CellStatus::Diverged;
      c.error = e.what();
    }
  });

  GridReport report;
  if (retain_cap) {
    report.retain_cap = *retain_cap;
  } else {
    double baseline = 0.0;
    for (const auto& b : baselines) {
      if (b && std::isfinite(*b)) {
        baseline = *b;
        break;
      }
    }
    report.retain_cap = 2.0 * baseline + 0.5;
  }

  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < n; ++k) {
    GridCell& c = cells[k];
    if (c.status == CellStatus::Diverged) continue;
    if (!(c.final_retain_distance <= report.retain_cap)) {
      c.status = CellStatus::OverCap;
      continue;
    }
    if (!best) {
      best = k;
      continue;
    }
    const GridCell& b = cells[*best];
    if (std::tie(c.final_forget_distance, c.lr, c.beta) < std::tie(b.final_forget_distance, b.lr, b.beta)) {
      best = k;
    }
  }
  report.cells = std::move(cells);
  if (!best) throw ExhaustionError("grid_search: no grid point finished within the retain-distance cap");
  report.best = *best;
  return report;
}

}  // namespace npo
