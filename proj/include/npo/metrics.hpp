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

// Evaluation quantities: forget/retain distance, forget KL, the divergence
// norm, and Pareto frontiers over (forget distance, retain distance).
//
// KL directions are fixed per metric:
//   forget/retain distance  KL(pi_retr || pi_theta)
//   forget KL               KL(pi_ref  || pi_theta)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npo/errors.hpp"
#include "npo/io.hpp"
#include "npo/model.hpp"
#include "npo/numerics.hpp"

namespace npo {

/// mean_i KL(Bern(sigmoid(a_i)) || Bern(sigmoid(b_i))).
inline double mean_kl_logits(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("mean_kl_logits: length mismatch");
  Vector kl(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) kl(i) = kl_bernoulli_logits(a(i), b(i));
  return pairwise_mean(kl);
}

namespace detail {

template <ParametricModel M>
void require_same_input(const M& a, const M& b, const Dataset& ds, const char* op) {
  if (a.input_dim() != b.input_dim() || a.input_dim() != ds.dim()) {
    throw ShapeError(std::string(op) + ": covariate dimension mismatch");
  }
  if (a.param_dim() != b.param_dim()) throw ShapeError(std::string(op) + ": parameter dimension mismatch");
}

template <ParametricModel M>
double model_kl(const M& first, const M& second, const Dataset& ds, const char* op) {
  require_same_input(first, second, ds, op);
  if (ds.empty()) throw ConfigError(std::string(op) + ": empty dataset");
  const Vector a = first.features(ds.X) * first.theta();
  const Vector b = second.features(ds.X) * second.theta();
  return mean_kl_logits(a, b);
}

}  // namespace detail

template <ParametricModel M>
double forget_distance(const M& retrained, const M& unlearned, const Dataset& forget) {
  return detail::model_kl(retrained, unlearned, forget, "forget_distance");
}

template <ParametricModel M>
double retain_distance(const M& retrained, const M& unlearned, const Dataset& retain) {
  return detail::model_kl(retrained, unlearned, retain, "retain_distance");
}

template <ParametricModel M>
double forget_kl(const M& initial, const M& unlearned, const Dataset& forget) {
  return detail::model_kl(initial, unlearned, forget, "forget_kl");
}

/// ||theta - theta_init||_{X^T X} with X the forget-set feature matrix.
template <ParametricModel M>
double divergence_norm(const M& model, const M& initial, const Dataset& forget) {
  detail::require_same_input(model, initial, forget, "divergence_norm");
  return weighted_norm(model.theta() - initial.theta(), model.features(forget.X));
}

struct MetricRecord {
  double forget_distance = std::numeric_limits<double>::quiet_NaN();
  double retain_distance = std::numeric_limits<double>::quiet_NaN();
  double forget_kl = 0.0;
  double divergence_norm = 0.0;
};

/// Evaluates all trajectory metrics for a parameter vector against frozen
/// forget/retain batches. Without a retrained model the two distances are
/// reported as NaN.
class Evaluator {
 public:
  Evaluator(Batch forget, std::optional<Batch> retain, Vector initial_theta,
            std::optional<Vector> retrained_theta)
      : forget_(std::move(forget)), retain_(std::move(retain)), initial_(std::move(initial_theta)) {
    if (forget_.empty()) throw ConfigError("Evaluator: empty forget batch");
    if (initial_.size() != forget_.phi.cols()) throw ShapeError("Evaluator: initial theta size mismatch");
    initial_forget_ = forget_.phi * initial_;
    if (retrained_theta) {
      if (retrained_theta->size() != initial_.size()) throw ShapeError("Evaluator: retrained theta size mismatch");
      retr_forget_ = forget_.phi * *retrained_theta;
      if (retain_) retr_retain_ = retain_->phi * *retrained_theta;
    }
  }

  template <ParametricModel M>
  static Evaluator for_models(const M& initial, const M* retrained, const Dataset& forget,
                              const Dataset* retain) {
    std::optional<Batch> rb;
    if (retain) rb = make_batch(initial, *retain);
    std::optional<Vector> rt;
    if (retrained) rt = retrained->theta();
    return Evaluator(make_batch(initial, forget), std::move(rb), initial.theta(), std::move(rt));
  }

  MetricRecord evaluate(const Vector& theta) const {
    if (theta.size() != initial_.size()) throw ShapeError("Evaluator: theta size mismatch");
    MetricRecord m;
    const Vector s_forget = forget_.phi * theta;
    if (retr_forget_) m.forget_distance = mean_kl_logits(*retr_forget_, s_forget);
    if (retr_retain_) m.retain_distance = mean_kl_logits(*retr_retain_, retain_->phi * theta);
    m.forget_kl = mean_kl_logits(initial_forget_, s_forget);
    m.divergence_norm = (s_forget - initial_forget_).norm();
    return m;
  }

 private:
  Batch forget_;
  std::optional<Batch> retain_;
  Vector initial_;
  Vector initial_forget_;
  std::optional<Vector> retr_forget_;
  std::optional<Vector> retr_retain_;
};

// ---------------------------------------------------------------------------
// Pareto frontiers

struct ParetoPoint {
  double forget_distance = 0.0;
  double retain_distance = 0.0;
  long step = 0;
  std::string run_id;
};

/// a dominates b: no worse in both coordinates, strictly better in one.
inline bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  return a.forget_distance <= b.forget_distance && a.retain_distance <= b.retain_distance &&
         (a.forget_distance < b.forget_distance || a.retain_distance < b.retain_distance);
}

/// Non-dominated subset sorted by forget distance ascending. Among points
/// equal in both coordinates only the one with the lowest step is kept.
inline std::vector<ParetoPoint> pareto_frontier(std::vector<ParetoPoint> points) {
  if (points.empty()) throw ConfigError("pareto_frontier: empty input");
  for (const auto& p : points) {
    if (!std::isfinite(p.forget_distance) || !std::isfinite(p.retain_distance) || p.forget_distance < 0 ||
        p.retain_distance < 0) {
      throw ConfigError("pareto_frontier: distances must be finite and >= 0");
    }
  }
  std::sort(points.begin(), points.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    if (a.forget_distance != b.forget_distance) return a.forget_distance < b.forget_distance;
    if (a.retain_distance != b.retain_distance) return a.retain_distance < b.retain_distance;
    if (a.step != b.step) return a.step < b.step;
    return a.run_id < b.run_id;
  });
  std::vector<ParetoPoint> front;
  double best_retain = std::numeric_limits<double>::infinity();
  for (auto& p : points) {
    if (p.retain_distance < best_retain) {
      best_retain = p.retain_distance;
      front.push_back(std::move(p));
    }
  }
  return front;
}

/// Lowest retain distance reachable on the frontier with forget distance <= f
/// (+inf when no frontier point qualifies).
inline double frontier_retain_at(std::span<const ParetoPoint> frontier, double f) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : frontier) {
    if (p.forget_distance <= f) best = std::min(best, p.retain_distance);
  }
  return best;
}

struct DominanceCount {
  std::size_t wins = 0;       // grid points where a's retain distance <= b's
  std::size_t compared = 0;   // grid points reached by at least one frontier
  std::size_t grid = 0;       // all grid points
  double fraction() const { return compared ? static_cast<double>(wins) / static_cast<double>(compared) : 0.0; }
  double strict_fraction() const { return grid ? static_cast<double>(wins) / static_cast<double>(grid) : 0.0; }
};

/// Compares two frontiers on a forget-distance grid. A grid point reached by
/// neither frontier carries no comparison and is excluded from `compared`; a
/// point reached only by `b` counts against `a`.
inline DominanceCount weak_dominance(std::span<const ParetoPoint> a, std::span<const ParetoPoint> b,
                                     std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("weak_dominance: empty grid");
  DominanceCount c;
  c.grid = grid.size();
  for (double f : grid) {
    const double ra = frontier_retain_at(a, f);
    const double rb = frontier_retain_at(b, f);
    if (!std::isfinite(ra) && !std::isfinite(rb)) continue;
    ++c.compared;
    if (std::isfinite(ra) && ra <= rb) ++c.wins;
  }
  return c;
}

/// Fraction of compared grid points at which `a` weakly dominates `b`
/// (0 when no grid point is reached by either frontier).
inline double weak_dominance_fraction(std::span<const ParetoPoint> a, std::span<const ParetoPoint> b,
                                      std::span<const double> grid) {
  return weak_dominance(a, b, grid).fraction();
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0 && hi > lo) || n < 2) throw ConfigError("log_grid: need 0 < lo < hi and n >= 2");
  std::vector<double> g(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

// ---------------------------------------------------------------------------
// Seed-averaged curves

struct CurvePoint {
  long step = 0;
  double forget_distance = 0.0;
  double retain_distance = 0.0;
  int n_seeds = 0;
};

/// Means of forget/retain distance across runs at matched step indices, in
/// step order. Runs that stopped early contribute only to the steps they logged.
inline std::vector<CurvePoint> average_curves(std::span<const std::vector<CurvePoint>> runs) {
  std::map<long, CurvePoint> acc;
  for (const auto& run : runs) {
    for (const auto& p : run) {
      CurvePoint& c = acc[p.step];
      c.step = p.step;
      c.forget_distance += p.forget_distance;
      c.retain_distance += p.retain_distance;
      c.n_seeds += 1;
    }
  }
  std::vector<CurvePoint> out;
  out.reserve(acc.size());
  for (auto& [step, c] : acc) {
    c.forget_distance /= c.n_seeds;
    c.retain_distance /= c.n_seeds;
    out.push_back(c);
  }
  return out;
}

inline std::vector<ParetoPoint> curve_to_points(std::span<const CurvePoint> curve, const std::string& run_id) {
  std::vector<ParetoPoint> pts;
  pts.reserve(curve.size());
  for (const auto& c : curve) pts.push_back({c.forget_distance, c.retain_distance, c.step, run_id});
  return pts;
}

inline std::string curve_csv(std::span<const CurvePoint> curve) {
  std::string out = "step,forget_distance,retain_distance,n_seeds\n";
  for (const auto& c : curve) {
    out += std::to_string(c.step) + "," + io::format_double(c.forget_distance) + "," +
           io::format_double(c.retain_distance) + "," + std::to_string(c.n_seeds) + "\n";
  }
  return out;
}

/// Frontier export; n_seeds is carried over from the averaged curve.
inline std::string frontier_csv(std::span<const ParetoPoint> frontier, int n_seeds) {
  std::string out = "step,forget_distance,retain_distance,n_seeds\n";
  for (const auto& p : frontier) {
    out += std::to_string(p.step) + "," + io::format_double(p.forget_distance) + "," +
           io::format_double(p.retain_distance) + "," + std::to_string(n_seeds) + "\n";
  }
  return out;
}

}  // namespace npo
