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
#include <vector>

#include <gtest/gtest.h>

#include "npo/numerics.hpp"
#include "npo/rng.hpp"
#include "test_util.hpp"

namespace npo {
namespace {

using testing::random_matrix;
using testing::random_vector;

TEST(Sigmoid, KnownValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(1.0), 0.7310585786, 1e-10);
}

TEST(Sigmoid, SymmetryAndMonotone) {
  double prev = -1.0;
  for (double z = -700.0; z <= 700.0; z += 0.37) {
    EXPECT_NEAR(sigmoid(z) + sigmoid(-z), 1.0, 1e-15) << z;
    EXPECT_GE(sigmoid(z), prev);
    prev = sigmoid(z);
  }
  for (double z = -30.0; z < 30.0; z += 0.01) EXPECT_LT(sigmoid(z), sigmoid(z + 0.01));
}

TEST(Sigmoid, NoOverflowAtExtremes) {
  EXPECT_EQ(sigmoid(1e308), 1.0);
  EXPECT_EQ(sigmoid(-1e308), 0.0);
  EXPECT_GT(sigmoid(-700.0), 0.0);
}

TEST(Sigmoid, RejectsNonFinite) {
  EXPECT_THROW(sigmoid(std::numeric_limits<double>::quiet_NaN()), DomainError);
  EXPECT_THROW(sigmoid(std::numeric_limits<double>::infinity()), DomainError);
  EXPECT_THROW(softplus(-std::numeric_limits<double>::infinity()), DomainError);
  EXPECT_THROW(log_sigmoid(std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST(LogSigmoid, KnownValues) {
  EXPECT_NEAR(log_sigmoid(0.0), -0.6931471806, 1e-10);
  EXPECT_NEAR(log_sigmoid(2.0), -0.1269280110, 1e-10);
  EXPECT_NEAR(log_sigmoid(-1000.0), -1000.0, 1e-9);
  EXPECT_TRUE(std::isfinite(log_sigmoid(-1e300)));
}

TEST(LogSigmoid, ExpMatchesSigmoid) {
  for (double z = -30.0; z <= 30.0; z += 0.05) {
    EXPECT_NEAR(std::exp(log_sigmoid(z)) / sigmoid(z), 1.0, 1e-12) << z;
  }
}

TEST(LogSigmoid, IsNegatedSoftplusOfNegation) {
  for (double z = -50.0; z <= 50.0; z += 0.5) EXPECT_EQ(log_sigmoid(z), -softplus(-z));
}

TEST(Softplus, MatchesNaiveInSafeRange) {
  for (double z = -20.0; z <= 20.0; z += 0.25) EXPECT_NEAR(softplus(z), std::log1p(std::exp(z)), 1e-14);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
}

TEST(Prob, Invariant) {
  EXPECT_NO_THROW(Prob(0.5));
  EXPECT_THROW(Prob(0.0), DomainError);
  EXPECT_THROW(Prob(1.0), DomainError);
  EXPECT_THROW(Prob(-0.1), DomainError);
  EXPECT_THROW(Prob(std::numeric_limits<double>::quiet_NaN()), DomainError);
  EXPECT_DOUBLE_EQ(Prob(0.25).complement(), 0.75);
}

TEST(KlBernoulli, KnownValues) {
  EXPECT_EQ(kl_bernoulli(Prob(0.3), Prob(0.3)), 0.0);
  EXPECT_NEAR(kl_bernoulli(Prob(0.5), Prob(0.25)), 0.1438410362, 1e-10);
}

TEST(KlBernoulli, GibbsProperty) {
  CounterRng rng = CounterRng::stream(1, "test", "kl");
  for (int k = 0; k < 2000; ++k) {
    const double p = rng.uniform(), q = rng.uniform();
    const double kl = kl_bernoulli(Prob(p), Prob(q));
    EXPECT_GE(kl, 0.0);
    if (std::abs(p - q) > 1e-3) {
      EXPECT_GT(kl, 0.0);
    }
  }
}

TEST(KlBernoulli, LogitFormAgrees) {
  CounterRng rng = CounterRng::stream(2, "test", "kl");
  for (int k = 0; k < 500; ++k) {
    // The probability form loses digits once 1 - sigmoid rounds; keep |logit| <= 8.
    const double a = 16 * rng.uniform() - 8, b = 16 * rng.uniform() - 8;
    EXPECT_NEAR(kl_bernoulli_logits(a, b), kl_bernoulli(Prob(sigmoid(a)), Prob(sigmoid(b))), 1e-9);
  }
  // Saturated models stay finite in the logit form.
  EXPECT_TRUE(std::isfinite(kl_bernoulli_logits(-40.0, -300.0)));
  EXPECT_NEAR(kl_bernoulli_logits(5.0, 5.0), 0.0, 1e-15);
}

TEST(PairwiseSum, MatchesNaiveAndIsOrderDeterministic) {
  std::vector<double> xs(1001);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = 1.0 / static_cast<double>(i + 1);
  double naive = 0.0;
  for (double x : xs) naive += x;
  EXPECT_NEAR(pairwise_sum(xs), naive, 1e-12);
  EXPECT_EQ(pairwise_sum(xs), pairwise_sum(xs));
  EXPECT_NEAR(pairwise_mean(xs), naive / 1001.0, 1e-14);
  EXPECT_THROW(pairwise_mean(std::span<const double>{}), ConfigError);
}

TEST(WeightedNorm, ZeroAndIsometry) {
  CounterRng rng = CounterRng::stream(3, "test", "wn");
  Matrix X = random_matrix(rng, 4, 3);
  EXPECT_EQ(weighted_norm(Vector::Zero(3), X), 0.0);

  // Orthonormal rows: ||X v|| equals the norm of the row-space coefficients.
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, 5, 5));
  const Matrix Q = qr.householderQ();
  const Matrix R = Q.leftCols(3).transpose();  // 3 x 5, orthonormal rows
  const Vector coef = random_vector(rng, 3);
  const Vector v = R.transpose() * coef;
  EXPECT_NEAR(weighted_norm(v, R), coef.norm(), 1e-12);
}

TEST(WeightedNorm, MatchesTripleLoopOracle) {
  CounterRng rng = CounterRng::stream(4, "test", "wn");
  for (int k = 0; k < 50; ++k) {
    const Matrix X = random_matrix(rng, 4, 3);
    const Vector v = random_vector(rng, 3);
    double quad = 0.0;  // v^T (X^T X) v with explicit loops
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        double g = 0.0;
        for (int i = 0; i < 4; ++i) g += X(i, a) * X(i, b);
        quad += v(a) * g * v(b);
      }
    }
    const double wn = weighted_norm(v, X);
    EXPECT_NEAR(wn * wn / quad, 1.0, 1e-10);
    EXPECT_NEAR(wn, std::sqrt(quad), 1e-12);
  }
}

TEST(WeightedNorm, ShapeMismatch) {
  EXPECT_THROW(weighted_norm(Vector::Zero(2), Matrix::Zero(4, 3)), ShapeError);
}

TEST(CounterRng, ReproducibleAndStreamsDiffer) {
  CounterRng a = CounterRng::stream(9, "forget", "covariates");
  CounterRng b = CounterRng::stream(9, "forget", "covariates");
  CounterRng c = CounterRng::stream(9, "retain", "covariates");
  CounterRng d = CounterRng::stream(10, "forget", "covariates");
  bool differ_c = false, differ_d = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    differ_c = differ_c || x != c();
    differ_d = differ_d || x != d();
  }
  EXPECT_TRUE(differ_c);
  EXPECT_TRUE(differ_d);
  EXPECT_EQ(a.position(), 64u);
  EXPECT_EQ(CounterRng::stream(9, "forget", "covariates").at(5), CounterRng::stream(9, "forget", "covariates").at(5));
}

TEST(CounterRng, SamplerMoments) {
  CounterRng rng = CounterRng::stream(11, "test", "moments");
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
  }
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

}  // namespace
}  // namespace npo
