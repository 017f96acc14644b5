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

// Divergence-speed harness for GA and NPO on a logistic model.
//
// With X (n_f x d, n_f <= d) the forget design, Gamma = X X^T and
// c_init = X theta_init, gradient descent keeps theta - theta_init in the row
// span of X. Its Gram coordinates b = X (theta - theta_init) evolve as
//
//   GA:   b <- b - eta * Gamma * delta
//   NPO:  b <- b - eta * Gamma * diag(delta) * W
//
// where eta = eta0 / n_f, delta_i = (2y_i - 1)(1 - pred_i(b_i)),
// pred_i(b) = sigmoid((2y_i - 1)(c_init_i + b)) and
// W_i = pred_i(b_i)^beta / (pred_i(b_i)^beta + pred_i(0)^beta).
// ||theta - theta_init||_{X^T X} = ||b||_2, so the coordinates alone give the
// divergence norm. GA grows ||b|| linearly in t; NPO logarithmically.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "npo/errors.hpp"
#include "npo/metrics.hpp"
#include "npo/model.hpp"
#include "npo/numerics.hpp"
#include "npo/objectives.hpp"
#include "npo/rng.hpp"
#include "npo/trainer.hpp"

namespace npo::theory {

struct DesignBounds {
  double b_x = 0.9;      // lower bound on ||x_i||
  double B_x = 1.1;      // upper bound on ||x_i||
  double B_theta = 1.0;  // upper bound on ||theta_init||
};

struct TheoryDesign {
  Matrix X;      // n_f x d
  Matrix Gamma;  // n_f x n_f
  Vector theta_init;
  Labels labels;
  DesignBounds bounds;
  double c_offdiag = 0.0;

  Eigen::Index n_f() const { return X.rows(); }
  Eigen::Index d() const { return X.cols(); }
  Vector init_logits() const { return X * theta_init; }
  Dataset as_dataset() const {
    Dataset ds;
    ds.X = X;
    ds.y = labels;
    return ds;
  }
};

inline double max_offdiag(const Matrix& Gamma) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < Gamma.rows(); ++i) {
    for (Eigen::Index j = 0; j < Gamma.cols(); ++j) {
      if (i != j) m = std::max(m, std::abs(Gamma(i, j)));
    }
  }
  return m;
}

/// Throws InternalError if any admissibility condition fails.
inline void validate_design(const TheoryDesign& des) {
  const Eigen::Index n = des.n_f();
  if (n < 1 || n > des.d()) throw InternalError("design: need 1 <= n_f <= d");
  Eigen::JacobiSVD<Matrix> svd(des.X);
  if (!(svd.singularValues().minCoeff() > 1e-8)) throw InternalError("design: X X^T is not invertible");
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = des.X.row(i).norm();
    if (r < des.bounds.b_x - 1e-12 || r > des.bounds.B_x + 1e-12) {
      throw InternalError("design: row norm outside [b_x, B_x]");
    }
  }
  if (des.theta_init.norm() > des.bounds.B_theta + 1e-12) throw InternalError("design: ||theta_init|| > B_theta");
  const double off = max_offdiag(des.Gamma);
  const double limit = des.c_offdiag / static_cast<double>(n);
  if (off > limit + 1e-15) throw InternalError("design: off-diagonal Gram entries exceed c_offdiag / n_f");
  if (n > 1 && des.c_offdiag > 0.0 && !(off > 0.0)) {
    throw InternalError("design: expected a nonzero off-diagonal bump");
  }
}

/// Admissible design: an orthonormal frame from the QR of a Gaussian matrix,
/// rows mixed by a small symmetric bump (so 0 < max|Gamma_ij| <= c_offdiag/n_f)
/// and rescaled to norms uniform in [b_x, B_x]. c_offdiag = 0 keeps the rows
/// exactly orthogonal.
inline TheoryDesign make_design(int n_f, int d, double c_offdiag, std::uint64_t seed, DesignBounds bounds = {}) {
  if (n_f < 1 || d < 1) throw ConfigError("make_design: n_f and d must be >= 1");
  if (n_f > d) throw ConfigError("make_design: infeasible, n_f must be <= d");
  if (!(c_offdiag >= 0.0)) throw ConfigError("make_design: c_offdiag must be >= 0");
  if (!(bounds.b_x > 0.0 && bounds.B_x >= bounds.b_x && bounds.B_theta >= 0.0)) {
    throw ConfigError("make_design: need 0 < b_x <= B_x and B_theta >= 0");
  }

  CounterRng frame_rng = CounterRng::stream(seed, "theory", "frame");
  CounterRng norm_rng = CounterRng::stream(seed, "theory", "norms");
  CounterRng bump_rng = CounterRng::stream(seed, "theory", "bump");
  CounterRng theta_rng = CounterRng::stream(seed, "theory", "theta_init");
  CounterRng label_rng = CounterRng::stream(seed, "theory", "labels");

  Matrix G(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) G(i, j) = frame_rng.normal();
  }
  const Matrix Q = Eigen::HouseholderQR<Matrix>(G).householderQ();
  const Matrix frame = Q.leftCols(n_f).transpose();  // n_f orthonormal rows

  Vector norms(n_f);
  for (int i = 0; i < n_f; ++i) norms(i) = bounds.b_x + (bounds.B_x - bounds.b_x) * norm_rng.uniform();

  Matrix E = Matrix::Zero(n_f, n_f);
  for (int i = 0; i < n_f; ++i) {
    for (int j = i + 1; j < n_f; ++j) E(i, j) = E(j, i) = 2.0 * bump_rng.uniform() - 1.0;
  }

  auto build = [&](double eps) {
    Matrix X = (Matrix::Identity(n_f, n_f) + eps * E) * frame;
    for (int i = 0; i < n_f; ++i) X.row(i) *= norms(i) / X.row(i).norm();
    return X;
  };

  TheoryDesign des;
  des.bounds = bounds;
  des.c_offdiag = c_offdiag;
  double eps = 0.0;
  if (c_offdiag > 0.0 && n_f > 1) {
    const double limit = c_offdiag / n_f;
    eps = limit / (2.0 * bounds.B_x * bounds.B_x);
    for (int it = 0; it < 200; ++it) {
      if (max_offdiag(build(eps) * build(eps).transpose()) <= 0.9 * limit) break;
      eps *= 0.5;
    }
  }
  des.X = build(eps);
  des.Gamma = des.X * des.X.transpose();

  Vector dir(d);
  for (int j = 0; j < d; ++j) dir(j) = theta_rng.normal();
  des.theta_init = dir.normalized() * (bounds.B_theta * theta_rng.uniform());

  des.labels.resize(n_f);
  for (int i = 0; i < n_f; ++i) des.labels(i) = label_rng.bernoulli(0.5) ? 1 : 0;

  validate_design(des);
  return des;
}

enum class Method { GA, NPO };

inline const char* to_string(Method m) { return m == Method::GA ? "GA" : "NPO"; }

struct CoordinateTrajectory {
  Matrix b;  // (T+1) x n_f, row t holds b^(t)
  Method method = Method::GA;
  double lr_normalized = 0.0;
  double beta = 0.0;

  Eigen::Index steps() const { return b.rows() - 1; }

  /// ||b^(t)||_2 for t = 0..T.
  Vector norms() const {
    Vector n(b.rows());
    for (Eigen::Index t = 0; t < b.rows(); ++t) n(t) = b.row(t).norm();
    return n;
  }
};

namespace detail {

inline double signed_label(int y) { return y == 1 ? 1.0 : -1.0; }

/// pred_i(b) in log space: log sigmoid((2y-1)(c + b)).
inline double log_pred(double c_init, double b, int y) { return log_sigmoid(signed_label(y) * (c_init + b)); }

inline double delta(double c_init, double b, int y) {
  return signed_label(y) * sigmoid(-signed_label(y) * (c_init + b));
}

/// W_i with coefficient 1: pred^beta / (pred^beta + pred(0)^beta).
inline double npo_weight(double c_init, double b, int y, double beta) {
  return sigmoid(beta * (log_pred(c_init, b, y) - log_pred(c_init, 0.0, y)));
}

}  // namespace detail

/// Iterates the exact coordinate recursions for `steps` steps at lr eta0.
inline CoordinateTrajectory run_coordinates(const TheoryDesign& des, Method method, int steps, double lr0,
                                            double beta = 1.0) {
  if (steps < 0) throw ConfigError("run_coordinates: steps must be >= 0");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("run_coordinates: lr must be finite and >= 0");
  if (method == Method::NPO) {
    if (!(beta > 0.0)) throw ConfigError("run_coordinates: NPO requires beta > 0");
    if (lr0 > 1.0) throw ConfigError("run_coordinates: NPO analysis requires eta0 <= 1");
  }
  const Eigen::Index n = des.n_f();
  const Vector c_init = des.init_logits();
  CoordinateTrajectory traj;
  traj.method = method;
  traj.lr_normalized = lr0 / static_cast<double>(n);
  traj.beta = method == Method::NPO ? beta : 0.0;
  traj.b = Matrix::Zero(steps + 1, n);

  Vector b = Vector::Zero(n);
  Vector step_dir(n);
  for (int t = 0; t < steps; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = des.labels(i);
      step_dir(i) = detail::delta(c_init(i), b(i), y);
      if (method == Method::NPO) step_dir(i) *= detail::npo_weight(c_init(i), b(i), y, beta);
    }
    b -= traj.lr_normalized * (des.Gamma * step_dir);
    if (!b.allFinite()) throw DivergenceError("run_coordinates: non-finite coordinates", static_cast<std::size_t>(t + 1));
    traj.b.row(t + 1) = b.transpose();
  }
  return traj;
}

/// ||theta^(t) - theta_init||_{X^T X} from direct gradient descent on the
/// logistic model. The objectives-module NPO gradient carries the weight
/// 2 sigmoid(beta R), twice the coordinate recursion's W, so NPO runs at eta0/2.
inline Vector parameter_space_norms(const TheoryDesign& des, Method method, int steps, double lr0,
                                    double beta = 1.0) {
  const LogisticModel start(des.theta_init);
  const Dataset forget = des.as_dataset();
  Weights w;
  double lr = lr0;
  if (method == Method::GA) {
    w.ga = 1.0;
  } else {
    w.npo = 1.0;
    lr = lr0 / 2.0;
  }
  ObjectiveSpec<LogisticModel> spec{w, beta, Reference<LogisticModel>(start), std::nullopt};
  const CompositeObjective<LogisticModel> objective(spec, start, &forget, nullptr);
  const Evaluator ev = Evaluator::for_models<LogisticModel>(start, nullptr, forget, nullptr);
  const TrajectoryLog log = run_descent<LogisticModel>(start.theta(), steps, lr, 1, objective, ev);
  Vector out(static_cast<Eigen::Index>(log.records.size()));
  for (std::size_t t = 0; t < log.records.size(); ++t) out(static_cast<Eigen::Index>(t)) = log.records[t].metrics.divergence_norm;
  return out;
}

// ---------------------------------------------------------------------------
// Rate fits

struct LinearFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
};

struct LogFit {
  double intercept = 0.0;
  double scale = 0.0;
  double c = 0.0;
  double r2 = 0.0;
};

struct RateReport {
  LinearFit linear;
  LogFit logarithmic;
  long t_start = 0;
  long t_end = 0;
  bool linear_wins() const { return linear.r2 > logarithmic.r2; }
  const char* winner() const { return linear_wins() ? "linear" : "logarithmic"; }
};

struct FitOptions {
  long t_start = 100;
  std::size_t min_points = 100;
  int c_per_decade = 40;
  int c_min_exp10 = -4;
  int c_max_exp10 = 2;
};

namespace detail {

struct AffineFit {
  double intercept, slope, r2;
};

inline AffineFit affine_least_squares(const std::vector<double>& u, const std::vector<double>& y) {
  const double n = static_cast<double>(u.size());
  double mu = 0, my = 0;
  for (std::size_t i = 0; i < u.size(); ++i) mu += u[i], my += y[i];
  mu /= n, my /= n;
  double suu = 0, suy = 0, syy = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    suu += (u[i] - mu) * (u[i] - mu);
    suy += (u[i] - mu) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(suu > 0.0)) return {my, 0.0, 0.0};
  const double slope = suy / suu;
  const double intercept = my - slope * mu;
  double sse = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double e = y[i] - intercept - slope * u[i];
    sse += e * e;
  }
  return {intercept, slope, 1.0 - sse / syy};
}

}  // namespace detail

/// Least-squares fits of norms(t), t in [t_start, T], to a + k t and to
/// a + k log(c t + 1), with c profiled over a log-spaced grid restricted to
/// c >= 1 / T so the logarithmic model keeps visible curvature on the window.
inline RateReport fit_rates(const Vector& norms, const FitOptions& opt = {}) {
  const long T = static_cast<long>(norms.size()) - 1;
  if (T < opt.t_start || static_cast<std::size_t>(T - opt.t_start + 1) < opt.min_points) {
    throw FitError("fit_rates: need at least " + std::to_string(opt.min_points) + " steps from t=" +
                   std::to_string(opt.t_start));
  }
  std::vector<double> t, y;
  for (long s = opt.t_start; s <= T; ++s) {
    t.push_back(static_cast<double>(s));
    y.push_back(norms(s));
  }
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  if (!(*hi - *lo > 1e-12 * std::max(1.0, std::abs(*hi)))) throw FitError("fit_rates: degenerate (constant) trajectory");

  RateReport rep;
  rep.t_start = opt.t_start;
  rep.t_end = T;
  const auto lin = detail::affine_least_squares(t, y);
  rep.linear = {lin.intercept, lin.slope, lin.r2};

  rep.logarithmic.r2 = -std::numeric_limits<double>::infinity();
  std::vector<double> u(t.size());
  const double c_floor = 1.0 / static_cast<double>(T);
  for (int k = opt.c_min_exp10 * opt.c_per_decade; k <= opt.c_max_exp10 * opt.c_per_decade; ++k) {
    const double c = std::pow(10.0, static_cast<double>(k) / opt.c_per_decade);
    if (c < c_floor) continue;
    for (std::size_t i = 0; i < t.size(); ++i) u[i] = std::log1p(c * t[i]);
    const auto f = detail::affine_least_squares(u, y);
    if (f.r2 > rep.logarithmic.r2) rep.logarithmic = {f.intercept, f.slope, c, f.r2};
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Envelope checks

struct EnvelopeReport {
  Method method = Method::GA;
  bool vacuous = false;
  bool sign_pattern_ok = true;
  bool monotone_ok = true;
  // GA: C1 eta t <= |b_i| <= C2 eta t.  NPO: (1/beta) log(Ca eta t + 1) <= |b_i| <= (1/beta) log(Cb eta t + 1).
  double lower = 0.0;
  double upper = 0.0;
  // Constants fitted on t <= T/2 only; the envelope must extend to t > T/2
  // with these constants relaxed by at most `extrapolation_slack`.
  double lower_first_half = 0.0;
  double upper_first_half = 0.0;
  double extrapolation_slack = 2.0;
  bool extrapolation_ok = true;
  // GA increments: |b^(t+1)_i - b^(t)_i| within [eta Gamma_ii C3 / 2, 3 eta Gamma_ii / 2], C3 = min |delta|.
  double c3 = 0.0;
  bool increments_ok = true;
  // NPO weight: C5 exp((2y-1) beta b) <= W <= C6 exp((2y-1) beta b).
  double c5 = 0.0;
  double c6 = 0.0;
};

/// Checks the sign, monotonicity and envelope structure of a coordinate
/// trajectory. Throws TheoryViolation when no finite positive constants exist.
inline EnvelopeReport check_lemma_envelopes(const CoordinateTrajectory& traj, const TheoryDesign& des) {
  EnvelopeReport rep;
  rep.method = traj.method;
  const Eigen::Index T = traj.steps();
  const Eigen::Index n = des.n_f();
  if (traj.b.cols() != n) throw ShapeError("check_lemma_envelopes: trajectory/design size mismatch");
  if (T < 1) {
    rep.vacuous = true;
    return rep;
  }
  const double eta = traj.lr_normalized;
  const double beta = traj.beta;
  if (!(eta > 0.0)) throw TheoryViolation("check_lemma_envelopes: zero learning rate, coordinates never move");
  const Vector c_init = des.init_logits();

  // Per-(t, i) constant that would make the envelope tight at that point.
  auto tight_constant = [&](Eigen::Index t, Eigen::Index i) {
    const double mag = std::abs(traj.b(t, i));
    const double et = eta * static_cast<double>(t);
    return traj.method == Method::GA ? mag / et : std::expm1(beta * mag) / et;
  };

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  double lo_half = std::numeric_limits<double>::infinity(), hi_half = 0.0;
  const Eigen::Index half = std::max<Eigen::Index>(1, T / 2);
  for (Eigen::Index t = 1; t <= T; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = detail::signed_label(des.labels(i));
      const double b = traj.b(t, i);
      if (!(s * b < 0.0)) rep.sign_pattern_ok = false;
      if (s * (b - traj.b(t - 1, i)) > 0.0) rep.monotone_ok = false;
      const double k = tight_constant(t, i);
      lo = std::min(lo, k), hi = std::max(hi, k);
      if (t <= half) lo_half = std::min(lo_half, k), hi_half = std::max(hi_half, k);
    }
  }
  rep.lower = lo, rep.upper = hi;
  rep.lower_first_half = lo_half, rep.upper_first_half = hi_half;
  rep.extrapolation_ok = lo >= lo_half / rep.extrapolation_slack && hi <= hi_half * rep.extrapolation_slack;

  if (!rep.sign_pattern_ok) throw TheoryViolation(std::string(to_string(traj.method)) + ": sign pattern violated");
  if (!rep.monotone_ok) throw TheoryViolation(std::string(to_string(traj.method)) + ": coordinates not monotone");
  if (!(lo > 0.0) || !std::isfinite(hi)) {
    throw TheoryViolation(std::string(to_string(traj.method)) + ": no finite positive envelope constants");
  }
  if (!rep.extrapolation_ok) {
    throw TheoryViolation(std::string(to_string(traj.method)) + ": envelope constants drift with t");
  }

  if (traj.method == Method::GA) {
    double c3 = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index i = 0; i < n; ++i) {
        c3 = std::min(c3, std::abs(detail::delta(c_init(i), traj.b(t, i), des.labels(i))));
      }
    }
    rep.c3 = c3;
    for (Eigen::Index t = 0; t < T && rep.increments_ok; ++t) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double inc = std::abs(traj.b(t + 1, i) - traj.b(t, i));
        const double g = eta * des.Gamma(i, i);
        if (inc < 0.5 * g * c3 * (1 - 1e-12) || inc > 1.5 * g * (1 + 1e-12)) {
          rep.increments_ok = false;
          break;
        }
      }
    }
    if (!rep.increments_ok) throw TheoryViolation("GA: coordinate increments leave [eta G_ii C3/2, 3 eta G_ii/2]");
  } else {
    double c5 = std::numeric_limits<double>::infinity(), c6 = 0.0;
    for (Eigen::Index t = 0; t <= T; ++t) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const int y = des.labels(i);
        const double b = traj.b(t, i);
        const double w = detail::npo_weight(c_init(i), b, y, beta);
        const double ratio = w / std::exp(detail::signed_label(y) * beta * b);
        c5 = std::min(c5, ratio), c6 = std::max(c6, ratio);
      }
    }
    rep.c5 = c5, rep.c6 = c6;
    if (!(c5 > 0.0) || !std::isfinite(c6)) throw TheoryViolation("NPO: adaptive weight has no exponential envelope");
  }
  return rep;
}

}  // namespace npo::theory
