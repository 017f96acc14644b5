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

// Scalar and vector primitives shared by the whole library. Every probability
// is derived from a logit; log-probabilities are computed as log_sigmoid of a
// signed logit so that saturated models never produce log(0).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "npo/errors.hpp"

namespace npo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

inline void require_finite(double z, const char* op) {
  if (!std::isfinite(z)) {
    throw DomainError(std::string(op) + ": non-finite argument");
  }
}

}  // namespace detail

/// A probability strictly inside (0, 1).
class Prob {
 public:
  explicit Prob(double value) : value_(value) {
    if (!(value > 0.0 && value < 1.0)) {
      throw DomainError("Prob: value must lie in the open interval (0,1)");
    }
  }

  double value() const noexcept { return value_; }
  double complement() const noexcept { return 1.0 - value_; }

  friend bool operator==(const Prob&, const Prob&) = default;

 private:
  double value_;
};

/// log(1 + e^z) without overflow for large |z|.
inline double softplus(double z) {
  detail::require_finite(z, "softplus");
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

/// 1 / (1 + e^{-z}); evaluates the branch whose exponent is non-positive.
inline double sigmoid(double z) {
  detail::require_finite(z, "sigmoid");
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log sigmoid(z) = -softplus(-z). Finite for every finite z.
inline double log_sigmoid(double z) { return -softplus(-z); }

/// KL(Bern(p) || Bern(q)).
inline double kl_bernoulli(Prob p, Prob q) {
  const double pv = p.value();
  const double qv = q.value();
  const double kl = pv * std::log(pv / qv) +
                    (1.0 - pv) * std::log((1.0 - pv) / (1.0 - qv));
  return std::max(kl, 0.0);
}

/// KL(Bern(sigmoid(a)) || Bern(sigmoid(b))) evaluated from the logits.
///
/// Stays accurate when either model is saturated (|logit| in the hundreds),
/// where forming the probabilities first would round to 0 or 1.
inline double kl_bernoulli_logits(double a, double b) {
  const double p = sigmoid(a);
  const double kl = p * (log_sigmoid(a) - log_sigmoid(b)) +
                    (1.0 - p) * (log_sigmoid(-a) - log_sigmoid(-b));
  return std::max(kl, 0.0);
}

/// Sum with a fixed pairwise reduction tree; the result depends only on the
/// input order, never on scheduling.
inline double pairwise_sum(std::span<const double> xs) {
  constexpr std::size_t kLeaf = 8;
  if (xs.size() <= kLeaf) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_mean(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("pairwise_mean: empty input");
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

inline double pairwise_mean(const Vector& v) {
  return pairwise_mean(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

/// ||v||_{X^T X} = ||X v||_2.
inline double weighted_norm(const Vector& v, const Matrix& X) {
  if (X.cols() != v.size()) {
    throw ShapeError("weighted_norm: X has " + std::to_string(X.cols()) +
                     " columns but v has " + std::to_string(v.size()) + " entries");
  }
  return (X * v).norm();
}

}  // namespace npo
