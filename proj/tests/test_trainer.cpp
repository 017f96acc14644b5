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


#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "npo/trainer.hpp"
#include "test_util.hpp"

namespace npo {
namespace {

using Spec = ObjectiveSpec<RandomFeatureModel>;
using Cfg = TrainConfig<RandomFeatureModel>;

// Paper-protocol models for one seed, fitted once for the whole suite.
struct Paper {
  Dataset forget, retain;
  RandomFeatureModel ref, retr;
};

const Paper& paper() {
  static const Paper p = [] {
    auto [f, r] = generate_pair(1.0, 16, 200, 1000, 1);
    RandomFeatureModel ref = fit_initial(f, r, 128, 1);
    RandomFeatureModel retr = fit_retrained(r, ref.shared_features(), ref);
    return Paper{f, r, ref, retr};
  }();
  return p;
}

TrajectoryLog run_paper(const std::string& method, double lr, double beta, int steps = 2000) {
  const Paper& p = paper();
  const Evaluator ev = Evaluator::for_models(p.ref, &p.retr, p.forget, &p.retain);
  Spec spec{preset_weights(method), beta, Reference<RandomFeatureModel>(p.ref), bern_half_targets(p.forget, 1)};
  return unlearn(p.ref, Cfg{steps, lr, spec, 10, 1}, p.forget, &p.retain, ev);
}

TEST(Fit, ZeroStepsKeepsZero) {
  const auto [f, r] = generate_pair(1.0, 4, 10, 20, 0);
  const RandomFeatureModel m = fit_initial(f, r, 8, 0, {0, 0.05});
  EXPECT_EQ(m.theta(), Vector::Zero(8));
}

TEST(Fit, OneStepOracle) {
  const auto [f, r] = generate_pair(1.0, 4, 10, 20, 2);
  const RandomFeatureModel m = fit_initial(f, r, 8, 3, {1, 0.05});
  // Hand-rolled: theta_1 = lr * mean_i phi_i (y_i - 1/2).
  const Dataset full = concatenate(f, r);
  Vector g = Vector::Zero(8);
  for (Eigen::Index i = 0; i < full.size(); ++i) {
    const Vector phi = (m.random_features().W * full.X.row(i).transpose()).cwiseMax(0.0);
    g += phi * (full.y(i) - 0.5);
  }
  g /= static_cast<double>(full.size());
  EXPECT_LT((m.theta() - 0.05 * g).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fit, PaperProtocolLowersLoss) {
  const Paper& p = paper();
  const Dataset full = concatenate(p.forget, p.retain);
  EXPECT_LT(rt_loss(p.ref, full).value, std::log(2.0));
  // pi_retr is fitted on D_RT alone, so it is at least as good there.
  EXPECT_LE(rt_loss(p.retr, p.retain).value, rt_loss(p.ref, p.retain).value);
}

TEST(Fit, RetrainedOnFullDataEqualsInitial) {
  const auto [f, r] = generate_pair(1.0, 4, 10, 20, 4);
  const FitConfig cfg{300, 0.05};
  const RandomFeatureModel ref = fit_initial(f, r, 8, 5, cfg);
  const RandomFeatureModel again = fit_retrained(concatenate(f, r), ref.shared_features(), ref, cfg);
  EXPECT_EQ(again.theta(), ref.theta());
}

TEST(Fit, FeatureMismatchIsPrecondition) {
  const auto [f, r] = generate_pair(1.0, 4, 10, 20, 4);
  const RandomFeatureModel ref = fit_initial(f, r, 8, 5, {10, 0.05});
  EXPECT_THROW(fit_retrained(r, RandomFeatures::make(4, 8, 6), ref), PreconditionError);
  EXPECT_THROW(fit_retrained(r, nullptr, ref), PreconditionError);
}

TEST(Fit, DivergenceCarriesStep) {
  const auto [f, r] = generate_pair(1.0, 4, 10, 20, 4);
  try {
    fit_initial(f, r, 8, 5, {100, std::numeric_limits<double>::max()});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.step(), 0u);
  }
  EXPECT_THROW(fit_initial(f, r, 8, 5, {-1, 0.05}), ConfigError);
  EXPECT_THROW(fit_initial(f, r, 8, 5, {10, -0.05}), ConfigError);
}

// Small logistic problem for cheap trajectory tests.
struct Small {
  Dataset forget, retain;
  LogisticModel ref{Vector()}, retr{Vector()};
};

Small small(std::uint64_t seed) {
  auto [f, r] = generate_pair(1.0, 3, 20, 40, seed);
  const LogisticModel zero(3);
  const LogisticModel ref = fit_cross_entropy(zero, make_batch(zero, concatenate(f, r)), {500, 0.1});
  const LogisticModel retr = fit_cross_entropy(zero, make_batch(zero, r), {500, 0.1});
  return {f, r, ref, retr};
}

TrajectoryLog run_small(const Small& s, const std::string& method, int steps, double lr, int log_every = 1) {
  const Evaluator ev = Evaluator::for_models(s.ref, &s.retr, s.forget, &s.retain);
  ObjectiveSpec<LogisticModel> spec{preset_weights(method), 1.0, Reference<LogisticModel>(s.ref),
                                    bern_half_targets(s.forget, 0)};
  return unlearn(s.ref, TrainConfig<LogisticModel>{steps, lr, spec, log_every, 0}, s.forget, &s.retain, ev);
}

TEST(Unlearn, FirstRecordIsReference) {
  const Small s = small(0);
  const TrajectoryLog log = run_small(s, "GA", 20, 0.1, 5);
  ASSERT_EQ(log.records.size(), 5u);
  EXPECT_EQ(log.records.front().step, 0);
  EXPECT_EQ(log.records.front().metrics.forget_kl, 0.0);
  EXPECT_EQ(log.records.front().metrics.divergence_norm, 0.0);
  EXPECT_NEAR(log.records.front().metrics.forget_distance, forget_distance(s.retr, s.ref, s.forget), 1e-14);
  for (std::size_t i = 1; i < log.records.size(); ++i) EXPECT_GT(log.records[i].step, log.records[i - 1].step);
}

TEST(Unlearn, LastStepAlwaysLogged) {
  const Small s = small(0);
  const TrajectoryLog log = run_small(s, "GA", 23, 0.1, 10);
  ASSERT_EQ(log.records.size(), 4u);
  EXPECT_EQ(log.records.back().step, 23);
}

TEST(Unlearn, ZeroLrIsFlat) {
  const Small s = small(1);
  const TrajectoryLog log = run_small(s, "RT", 50, 0.0, 10);
  for (const auto& r : log.records) {
    EXPECT_EQ(r.loss, log.records.front().loss);
    EXPECT_EQ(r.metrics.forget_distance, log.records.front().metrics.forget_distance);
    EXPECT_EQ(r.metrics.retain_distance, log.records.front().metrics.retain_distance);
  }
  EXPECT_EQ(log.final_theta, s.ref.theta());
}

TEST(Unlearn, ChainedStepsAreBitIdentical) {
  const Small s = small(2);
  const TrajectoryLog two = run_small(s, "NPO+RT", 2, 0.05);
  const TrajectoryLog one = run_small(s, "NPO+RT", 1, 0.05);
  // Second step from the first step's endpoint, with the same frozen reference.
  const Evaluator ev = Evaluator::for_models(s.ref, &s.retr, s.forget, &s.retain);
  ObjectiveSpec<LogisticModel> spec{preset_weights("NPO+RT"), 1.0, Reference<LogisticModel>(s.ref),
                                    bern_half_targets(s.forget, 0)};
  const CompositeObjective<LogisticModel> obj(spec, s.ref, &s.forget, &s.retain);
  const TrajectoryLog next = run_descent<LogisticModel>(one.final_theta, 1, 0.05, 1, obj, ev);
  EXPECT_EQ(next.final_theta, two.final_theta);
}

TEST(Unlearn, Deterministic) {
  const Small s = small(3);
  EXPECT_EQ(trajectory_csv(run_small(s, "DPO+RT", 100, 0.05, 7)), trajectory_csv(run_small(s, "DPO+RT", 100, 0.05, 7)));
}

TEST(Unlearn, ConvexRetainDescentIsMonotone) {
  const Small s = small(4);
  const TrajectoryLog log = run_small(s, "RT", 200, 0.05);
  for (std::size_t i = 1; i < log.records.size(); ++i) EXPECT_LE(log.records[i].loss, log.records[i - 1].loss);
}

TEST(Unlearn, StartMustMatchReference) {
  const Small s = small(5);
  const Evaluator ev = Evaluator::for_models(s.ref, &s.retr, s.forget, &s.retain);
  ObjectiveSpec<LogisticModel> spec{preset_weights("GA"), 1.0, Reference<LogisticModel>(s.ref), {}};
  EXPECT_THROW(unlearn(s.retr, TrainConfig<LogisticModel>{5, 0.1, spec, 1, 0}, s.forget, &s.retain, ev),
               ConfigError);
  EXPECT_THROW(unlearn(s.ref, TrainConfig<LogisticModel>{5, 0.1, spec, 0, 0}, s.forget, &s.retain, ev), ConfigError);
}

TEST(Unlearn, DivergenceKeepsPartialLog) {
  const Small s = small(6);
  try {
    run_small(s, "GA", 50, 1e306, 1);
    FAIL() << "expected divergence";
  } catch (const UnlearnDivergence& e) {
    EXPECT_FALSE(e.partial_log().records.empty());
    EXPECT_EQ(e.partial_log().records.front().step, 0);
    EXPECT_GT(e.step(), 0u);
  }
}

TEST(Trajectory, CsvColumns) {
  const Small s = small(7);
  const std::string csv = trajectory_csv(run_small(s, "GA", 3, 0.1));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "step,loss,forget_distance,retain_distance,forget_kl,divergence_norm,ga,fg,rt,fg_kl,rt_kl,npo,dpo,kto");
  const TrajectorySummary sum = summarize(run_small(s, "GA", 3, 0.1));
  EXPECT_LE(sum.min_forget_distance, sum.final_forget_distance);
}

TEST(PaperDefaults, GaDivergenceNormIncreasing) {
  const TrajectoryLog log = run_paper("GA", 5e-4, 1.0);
  double prev = -1.0;
  for (const auto& r : log.records) {
    if (r.step < 100) continue;
    EXPECT_GT(r.metrics.divergence_norm, prev) << r.step;
    prev = r.metrics.divergence_norm;
  }
  // Collapse signature and exploding forget KL.
  EXPECT_GT(log.at_step(2000).metrics.retain_distance, log.at_step(200).metrics.retain_distance);
  EXPECT_GT(log.at_step(2000).metrics.forget_kl, log.at_step(200).metrics.forget_kl);
}

TEST(PaperDefaults, NpoRtRetainStabilizes) {
  const TrajectoryLog log = run_paper("NPO+RT", 5e-3, 1.0);
  const double at1000 = log.at_step(1000).metrics.retain_distance;
  double lo = at1000, hi = at1000;
  for (const auto& r : log.records) {
    if (r.step < 1000) continue;
    lo = std::min(lo, r.metrics.retain_distance);
    hi = std::max(hi, r.metrics.retain_distance);
  }
  EXPECT_LT(hi - lo, 0.5 * at1000);
}

TEST(PaperDefaults, NpoForgetKlStaysBounded) {
  const TrajectoryLog log = run_paper("NPO", 5e-3, 1.0);
  EXPECT_LT(log.at_step(2000).metrics.forget_kl, 50.0);
}

TEST(GridSearch, PaperValuesSelectNonDiverging) {
  const CellRunner runner = [](double lr, double beta) { return run_paper("NPO+RT", lr, beta); };
  const GridReport rep = grid_search({5e-4, 5e-3, 5e-2}, {1.0}, runner);
  EXPECT_EQ(rep.cells.size(), 3u);
  EXPECT_EQ(rep.best_cell().status, CellStatus::Ok);
  EXPECT_TRUE(std::isfinite(rep.best_cell().final_forget_distance));
}

TrajectoryLog fake_log(double fd, double rd) {
  TrajectoryLog log;
  TrajectoryRecord first, last;
  first.metrics.forget_distance = 2.0;
  first.metrics.retain_distance = 0.01;
  last.step = 1;
  last.metrics.forget_distance = fd;
  last.metrics.retain_distance = rd;
  log.records = {first, last};
  return log;
}

TEST(GridSearch, SingleCellAndTies) {
  const GridReport one = grid_search({0.1}, {1.0}, [](double, double) { return fake_log(0.5, 0.1); });
  EXPECT_EQ(one.best, 0u);
  EXPECT_DOUBLE_EQ(one.retain_cap, 2 * 0.01 + 0.5);
  // Equal forget distance everywhere: the smallest (lr, beta) wins.
  const GridReport tie =
      grid_search({0.3, 0.1, 0.2}, {2.0, 1.0}, [](double, double) { return fake_log(0.5, 0.1); }, std::nullopt, 2);
  EXPECT_EQ(tie.best_cell().lr, 0.1);
  EXPECT_EQ(tie.best_cell().beta, 1.0);
}

TEST(GridSearch, CapDivergenceAndExhaustion) {
  const CellRunner runner = [](double lr, double) -> TrajectoryLog {
    if (lr > 1.0) throw DivergenceError("boom", 3);
    return lr < 0.05 ? fake_log(0.1, 5.0) : fake_log(0.4, 0.1);
  };
  const GridReport rep = grid_search({0.01, 0.1, 10.0}, {1.0}, runner);
  EXPECT_EQ(rep.cells[0].status, CellStatus::OverCap);
  EXPECT_EQ(rep.cells[2].status, CellStatus::Diverged);
  EXPECT_EQ(rep.best_cell().lr, 0.1);
  EXPECT_THROW(grid_search({10.0}, {1.0}, runner), ExhaustionError);
  EXPECT_THROW(grid_search({}, {1.0}, runner), ConfigError);
}

}  // namespace
}  // namespace npo
