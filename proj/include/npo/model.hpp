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

// Predictors: a linear logistic model and a random-feature model
// pi(y=1|x) = sigmoid(theta^T ReLU(W x)) with W frozen after construction.
// Both expose the same surface so losses and trainers are written once.

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <utility>

#include "npo/data.hpp"
#include "npo/errors.hpp"
#include "npo/io.hpp"
#include "npo/numerics.hpp"
#include "npo/rng.hpp"

namespace npo {

/// Frozen random projection; entries iid N(0, 1/d) from the (seed, "model", "W") stream.
struct RandomFeatures {
  Matrix W;  // width x d
  std::uint64_t seed = 0;

  static std::shared_ptr<const RandomFeatures> make(int d, int width, std::uint64_t seed) {
    if (d < 1 || width < 1) throw ConfigError("RandomFeatures: d and width must be >= 1");
    auto rf = std::make_shared<RandomFeatures>();
    rf->seed = seed;
    rf->W.resize(width, d);
    CounterRng rng = CounterRng::stream(seed, "model", "W");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int r = 0; r < width; ++r) {
      for (int c = 0; c < d; ++c) rf->W(r, c) = scale * rng.normal();
    }
    return rf;
  }

  /// Fixture constructor for tests that need a hand-picked W.
  static std::shared_ptr<const RandomFeatures> from_matrix(Matrix W, std::uint64_t seed = 0) {
    auto rf = std::make_shared<RandomFeatures>();
    rf->W = std::move(W);
    rf->seed = seed;
    return rf;
  }

  bool operator==(const RandomFeatures& o) const {
    return seed == o.seed && W.rows() == o.W.rows() && W.cols() == o.W.cols() && W == o.W;
  }
};

class LogisticModel {
 public:
  explicit LogisticModel(Eigen::Index d) : theta_(Vector::Zero(d)) {}
  explicit LogisticModel(Vector theta) : theta_(std::move(theta)) {}

  Eigen::Index input_dim() const { return theta_.size(); }
  Eigen::Index param_dim() const { return theta_.size(); }

  const Vector& theta() const { return theta_; }
  void set_theta(Vector theta) {
    if (theta.size() != theta_.size()) throw ShapeError("LogisticModel: parameter size mismatch");
    theta_ = std::move(theta);
  }

  Vector feature(const Vector& x) const {
    check_input(x.size());
    return x;
  }
  Matrix features(const Matrix& X) const {
    check_input(X.cols());
    return X;
  }

  LogisticModel with_theta(Vector theta) const {
    LogisticModel m = *this;
    m.set_theta(std::move(theta));
    return m;
  }

 private:
  void check_input(Eigen::Index d) const {
    if (d != theta_.size()) throw ShapeError("LogisticModel: input has wrong dimension");
  }

  Vector theta_;
};

class RandomFeatureModel {
 public:
  explicit RandomFeatureModel(std::shared_ptr<const RandomFeatures> rf)
      : rf_(std::move(rf)), theta_(Vector::Zero(rf_->W.rows())) {}
  RandomFeatureModel(std::shared_ptr<const RandomFeatures> rf, Vector theta)
      : rf_(std::move(rf)), theta_(std::move(theta)) {
    if (theta_.size() != rf_->W.rows()) throw ShapeError("RandomFeatureModel: theta size != width");
  }

  Eigen::Index input_dim() const { return rf_->W.cols(); }
  Eigen::Index param_dim() const { return rf_->W.rows(); }
  Eigen::Index width() const { return rf_->W.rows(); }

  const RandomFeatures& random_features() const { return *rf_; }
  const std::shared_ptr<const RandomFeatures>& shared_features() const { return rf_; }

  const Vector& theta() const { return theta_; }
  void set_theta(Vector theta) {
    if (theta.size() != theta_.size()) throw ShapeError("RandomFeatureModel: parameter size mismatch");
    theta_ = std::move(theta);
  }

  /// ReLU(W x); the subgradient at exactly zero is taken as zero.
  Vector feature(const Vector& x) const {
    if (x.size() != input_dim()) throw ShapeError("RandomFeatureModel: input has wrong dimension");
    return (rf_->W * x).cwiseMax(0.0);
  }
  Matrix features(const Matrix& X) const {
    if (X.cols() != input_dim()) throw ShapeError("RandomFeatureModel: input has wrong dimension");
    return (X * rf_->W.transpose()).cwiseMax(0.0);
  }

  RandomFeatureModel with_theta(Vector theta) const { return RandomFeatureModel(rf_, std::move(theta)); }

 private:
  std::shared_ptr<const RandomFeatures> rf_;
  Vector theta_;
};

template <class M>
concept ParametricModel = requires(const M& m, M& mut, const Vector& v, const Matrix& X) {
  { m.input_dim() } -> std::convertible_to<Eigen::Index>;
  { m.param_dim() } -> std::convertible_to<Eigen::Index>;
  { m.theta() } -> std::convertible_to<const Vector&>;
  { m.feature(v) } -> std::convertible_to<Vector>;
  { m.features(X) } -> std::convertible_to<Matrix>;
  { m.with_theta(v) } -> std::same_as<M>;
  mut.set_theta(v);
};

/// <theta, phi(x)>.
template <ParametricModel M>
double predict_logit(const M& model, const Vector& x) {
  return model.theta().dot(model.feature(x));
}

/// pi(y=1|x).
template <ParametricModel M>
double predict_prob(const M& model, const Vector& x) {
  return sigmoid(predict_logit(model, x));
}

/// log pi(y|x) for a label in {0,1}.
inline double log_prob_from_logit(double logit, int y) {
  return log_sigmoid(y == 1 ? logit : -logit);
}

/// Scalar factor (2y-1)(1 - pi(y|x)) such that grad log pi(y|x) = factor * phi(x).
inline double loglik_factor(double logit, int y) {
  return y == 1 ? sigmoid(-logit) : -sigmoid(logit);
}

/// grad_theta log pi(y|x) = phi(x) (2y-1) (1 - pi(y|x)).
template <ParametricModel M>
Vector loglik_grad(const M& model, const Vector& x, int y) {
  if (y != 0 && y != 1) throw ConfigError("loglik_grad: label must be 0 or 1");
  const Vector phi = model.feature(x);
  return loglik_factor(model.theta().dot(phi), y) * phi;
}

/// Feature matrix and labels of a dataset under a fixed feature map. Losses
/// consume batches so the feature map is applied once per run, not per step.
struct Batch {
  Matrix phi;  // n x p
  Labels y;

  Eigen::Index size() const { return phi.rows(); }
  bool empty() const { return phi.rows() == 0; }
};

template <ParametricModel M>
Batch make_batch(const M& model, const Dataset& ds) {
  return Batch{model.features(ds.X), ds.y};
}

template <ParametricModel M>
Batch make_batch(const M& model, const Dataset& ds, const Labels& labels) {
  if (labels.size() != ds.size()) throw ConfigError("make_batch: label vector length differs from dataset");
  return Batch{model.features(ds.X), labels};
}

// ---------------------------------------------------------------------------
// Checkpoints: a text header (family, d, width, w_seed) followed by theta.
// W is re-derived from w_seed on load rather than stored.

inline std::string checkpoint_text(const std::string& family, Eigen::Index d, Eigen::Index width,
                                   std::uint64_t w_seed, const Vector& theta) {
  std::string out = "npo-checkpoint 1\n";
  out += "family " + family + "\n";
  out += "d " + std::to_string(d) + "\n";
  out += "width " + std::to_string(width) + "\n";
  out += "w_seed " + std::to_string(w_seed) + "\n";
  out += "theta " + std::to_string(theta.size()) + "\n";
  for (Eigen::Index i = 0; i < theta.size(); ++i) out += io::format_double(theta(i)) + "\n";
  return out;
}

inline std::string to_checkpoint(const RandomFeatureModel& m) {
  return checkpoint_text("random_feature", m.input_dim(), m.width(), m.random_features().seed, m.theta());
}

inline std::string to_checkpoint(const LogisticModel& m) {
  return checkpoint_text("logistic", m.input_dim(), m.input_dim(), 0, m.theta());
}

struct CheckpointHeader {
  std::string family;
  Eigen::Index d = 0;
  Eigen::Index width = 0;
  std::uint64_t w_seed = 0;
  Vector theta;
};

inline CheckpointHeader parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  int version = 0;
  CheckpointHeader h;
  Eigen::Index n = 0;
  if (!(in >> tag >> version) || tag != "npo-checkpoint" || version != 1) {
    throw IoError("not an npo checkpoint (bad magic/version)");
  }
  auto expect = [&](const char* key) {
    if (!(in >> tag) || tag != key) throw IoError(std::string("checkpoint: expected field '") + key + "'");
  };
  expect("family");
  in >> h.family;
  expect("d");
  in >> h.d;
  expect("width");
  in >> h.width;
  expect("w_seed");
  in >> h.w_seed;
  expect("theta");
  in >> n;
  if (!in || n < 0) throw IoError("checkpoint: malformed header");
  h.theta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::string cell;
    if (!(in >> cell)) throw IoError("checkpoint: truncated theta");
    h.theta(i) = std::stod(cell);
  }
  return h;
}

inline RandomFeatureModel random_feature_from_checkpoint(const std::string& text) {
  CheckpointHeader h = parse_checkpoint(text);
  if (h.family != "random_feature") throw IoError("checkpoint family is '" + h.family + "', expected random_feature");
  auto rf = RandomFeatures::make(static_cast<int>(h.d), static_cast<int>(h.width), h.w_seed);
  return RandomFeatureModel(std::move(rf), std::move(h.theta));
}

inline LogisticModel logistic_from_checkpoint(const std::string& text) {
  CheckpointHeader h = parse_checkpoint(text);
  if (h.family != "logistic") throw IoError("checkpoint family is '" + h.family + "', expected logistic");
  return LogisticModel(std::move(h.theta));
}

template <ParametricModel M>
void save_checkpoint(const M& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_checkpoint(model));
}

}  // namespace npo
