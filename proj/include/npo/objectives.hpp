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

// Unlearning objectives over a Batch (feature matrix + labels). Every loss
// returns its mean value and the analytic gradient with respect to theta.
//
// Notation used in comments: s = <theta, phi(x)> is the current logit, r the
// frozen reference logit, l(y) = log pi(y|x) and R = l_theta(y) - l_ref(y).
// Ratios (pi_theta / pi_ref)^beta are only ever formed as exp(beta * R).

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "npo/errors.hpp"
#include "npo/model.hpp"
#include "npo/numerics.hpp"

namespace npo {

struct LossValue {
  double value = 0.0;
  Vector grad;
};

namespace detail {

inline void require_nonempty(const Batch& b, const char* op) {
  if (b.empty()) throw ConfigError(std::string(op) + ": empty dataset");
}

inline void require_params(const Vector& theta, const Batch& b, const char* op) {
  if (theta.size() != b.phi.cols()) throw ShapeError(std::string(op) + ": theta/feature size mismatch");
}

inline void require_ref(const Vector& ref_logits, const Batch& b, const char* op) {
  if (ref_logits.size() != b.size()) throw ShapeError(std::string(op) + ": reference logits length mismatch");
}

inline void require_labels(const Labels& y, const Batch& b, const char* op) {
  if (y.size() != b.size()) throw ConfigError(std::string(op) + ": surrogate targets length mismatch");
}

inline void require_beta(double beta, const char* op) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError(std::string(op) + ": beta must be > 0");
}

/// mean(per_sample), phi^T coeff / n
inline LossValue reduce(const Batch& b, const Vector& per_sample, const Vector& coeff) {
  const double n = static_cast<double>(b.size());
  return LossValue{pairwise_mean(per_sample), b.phi.transpose() * coeff / n};
}

}  // namespace detail

/// Frozen copy of the model that unlearning starts from.
template <ParametricModel M>
class Reference {
 public:
  explicit Reference(M model) : model_(std::move(model)) {}

  const M& model() const { return model_; }
  const Vector& theta() const { return model_.theta(); }
  Vector logits(const Batch& b) const { return b.phi * model_.theta(); }

 private:
  M model_;
};

// ---------------------------------------------------------------------------
// Per-term losses on batches.

/// L_GA = E[log pi(y|x)]; minimizing it is gradient ascent on cross-entropy.
inline LossValue ga_loss(const Vector& theta, const Batch& fg) {
  detail::require_nonempty(fg, "ga_loss");
  detail::require_params(theta, fg, "ga_loss");
  const Vector s = fg.phi * theta;
  Vector v(s.size()), c(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    v(i) = log_prob_from_logit(s(i), fg.y(i));
    c(i) = loglik_factor(s(i), fg.y(i));
  }
  return detail::reduce(fg, v, c);
}

/// Cross-entropy toward labels `y`: -E[log pi(y|x)].
inline LossValue cross_entropy(const Vector& theta, const Batch& b, const Labels& y, const char* op) {
  detail::require_nonempty(b, op);
  detail::require_params(theta, b, op);
  detail::require_labels(y, b, op);
  const Vector s = b.phi * theta;
  Vector v(s.size()), c(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    v(i) = -log_prob_from_logit(s(i), y(i));
    c(i) = -loglik_factor(s(i), y(i));
  }
  return detail::reduce(b, v, c);
}

/// L_FG = -E[log pi(y~|x)] with surrogate ("uninformed") labels y~.
inline LossValue fg_loss(const Vector& theta, const Batch& fg, const Labels& surrogate) {
  return cross_entropy(theta, fg, surrogate, "fg_loss");
}

/// L_RT = -E_{D_RT}[log pi(y|x)].
inline LossValue rt_loss(const Vector& theta, const Batch& rt) {
  return cross_entropy(theta, rt, rt.y, "rt_loss");
}

/// E_D[ KL(pi_theta(.|x) || pi_ref(.|x)) ]; d/ds KL = p(1-p)(s - r).
inline LossValue kl_reg(const Vector& theta, const Batch& b, const Vector& ref_logits) {
  detail::require_nonempty(b, "kl_reg");
  detail::require_params(theta, b, "kl_reg");
  detail::require_ref(ref_logits, b, "kl_reg");
  const Vector s = b.phi * theta;
  Vector v(s.size()), c(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double p = sigmoid(s(i));
    v(i) = kl_bernoulli_logits(s(i), ref_logits(i));
    c(i) = p * (1.0 - p) * (s(i) - ref_logits(i));
  }
  return detail::reduce(b, v, c);
}

/// Adaptive NPO weights W = 2 pi^beta / (pi^beta + pi_ref^beta) = 2 sigmoid(beta R).
inline Vector npo_weights(const Vector& theta, const Batch& fg, const Vector& ref_logits, double beta) {
  detail::require_beta(beta, "npo_weights");
  detail::require_params(theta, fg, "npo_weights");
  detail::require_ref(ref_logits, fg, "npo_weights");
  const Vector s = fg.phi * theta;
  Vector w(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double R = log_prob_from_logit(s(i), fg.y(i)) - log_prob_from_logit(ref_logits(i), fg.y(i));
    w(i) = 2.0 * sigmoid(beta * R);
  }
  return w;
}

/// L_NPO = (2/beta) E[softplus(beta R)]; gradient E[W grad l_theta(y)].
inline LossValue npo_loss(const Vector& theta, const Batch& fg, const Vector& ref_logits, double beta) {
  detail::require_beta(beta, "npo_loss");
  detail::require_nonempty(fg, "npo_loss");
  detail::require_params(theta, fg, "npo_loss");
  detail::require_ref(ref_logits, fg, "npo_loss");
  const Vector s = fg.phi * theta;
  Vector v(s.size()), c(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const int y = fg.y(i);
    const double R = log_prob_from_logit(s(i), y) - log_prob_from_logit(ref_logits(i), y);
    v(i) = 2.0 / beta * softplus(beta * R);
    c(i) = 2.0 * sigmoid(beta * R) * loglik_factor(s(i), y);
  }
  return detail::reduce(fg, v, c);
}

/// L_DPO with y_w = surrogate target and y_l = the true forget label:
/// -(1/beta) E[log sigmoid(beta (R_w - R_l))].
inline LossValue dpo_loss(const Vector& theta, const Batch& fg, const Vector& ref_logits,
                          const Labels& surrogate, double beta) {
  detail::require_beta(beta, "dpo_loss");
  detail::require_nonempty(fg, "dpo_loss");
  detail::require_params(theta, fg, "dpo_loss");
  detail::require_ref(ref_logits, fg, "dpo_loss");
  detail::require_labels(surrogate, fg, "dpo_loss");
  const Vector s = fg.phi * theta;
  Vector v(s.size()), c(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const int yw = surrogate(i);
    const int yl = fg.y(i);
    const double r = ref_logits(i);
    const double Rw = log_prob_from_logit(s(i), yw) - log_prob_from_logit(r, yw);
    const double Rl = log_prob_from_logit(s(i), yl) - log_prob_from_logit(r, yl);
    const double h = beta * (Rw - Rl);
    v(i) = -log_sigmoid(h) / beta;
    c(i) = -sigmoid(-h) * (loglik_factor(s(i), yw) - loglik_factor(s(i), yl));
  }
  return detail::reduce(fg, v, c);
}

/// KL anchor of the KTO loss: beta * max(0, mean log-ratio) over the
/// unrelated (x, y~) pairs. Treated as a constant inside the KTO gradient.
inline double kto_reference_point(const Vector& theta, const Batch& unrelated,
                                  const Vector& unrelated_ref_logits, double beta) {
  detail::require_beta(beta, "kto_reference_point");
  detail::require_nonempty(unrelated, "kto_reference_point");
  detail::require_params(theta, unrelated, "kto_reference_point");
  detail::require_ref(unrelated_ref_logits, unrelated, "kto_reference_point");
  const Vector s = unrelated.phi * theta;
  Vector ratio(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const int y = unrelated.y(i);
    ratio(i) = log_prob_from_logit(s(i), y) - log_prob_from_logit(unrelated_ref_logits(i), y);
  }
  return beta * std::max(0.0, pairwise_mean(ratio));
}

/// L_KTO = (2/beta) E_FG[-log sigmoid(z_ref - beta R)] with z_ref detached.
inline LossValue kto_loss(const Vector& theta, const Batch& fg, const Vector& ref_logits,
                          const Batch& unrelated, const Vector& unrelated_ref_logits, double beta) {
  detail::require_beta(beta, "kto_loss");
  detail::require_nonempty(fg, "kto_loss");
  detail::require_params(theta, fg, "kto_loss");
  detail::require_ref(ref_logits, fg, "kto_loss");
  const double z_ref = kto_reference_point(theta, unrelated, unrelated_ref_logits, beta);
  const Vector s = fg.phi * theta;
  Vector v(s.size()), c(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const int y = fg.y(i);
    const double R = log_prob_from_logit(s(i), y) - log_prob_from_logit(ref_logits(i), y);
    const double h = z_ref - beta * R;
    v(i) = 2.0 / beta * softplus(-h);
    c(i) = 2.0 * sigmoid(-h) * loglik_factor(s(i), y);
  }
  return detail::reduce(fg, v, c);
}

// ---------------------------------------------------------------------------
// Model/dataset conveniences mirroring the batch functions.

template <ParametricModel M>
LossValue ga_loss(const M& model, const Dataset& fg) {
  return ga_loss(model.theta(), make_batch(model, fg));
}

template <ParametricModel M>
LossValue fg_loss(const M& model, const Dataset& fg, const Labels& surrogate) {
  return fg_loss(model.theta(), make_batch(model, fg), surrogate);
}

template <ParametricModel M>
LossValue rt_loss(const M& model, const Dataset& rt) {
  return rt_loss(model.theta(), make_batch(model, rt));
}

template <ParametricModel M>
LossValue kl_reg(const M& model, const Reference<M>& ref, const Dataset& ds) {
  const Batch b = make_batch(model, ds);
  return kl_reg(model.theta(), b, ref.logits(b));
}

template <ParametricModel M>
LossValue npo_loss(const M& model, const Reference<M>& ref, const Dataset& fg, double beta) {
  const Batch b = make_batch(model, fg);
  return npo_loss(model.theta(), b, ref.logits(b), beta);
}

template <ParametricModel M>
LossValue dpo_loss(const M& model, const Reference<M>& ref, const Dataset& fg, const Labels& surrogate,
                   double beta) {
  const Batch b = make_batch(model, fg);
  return dpo_loss(model.theta(), b, ref.logits(b), surrogate, beta);
}

template <ParametricModel M>
LossValue kto_loss(const M& model, const Reference<M>& ref, const Dataset& fg,
                   const Dataset& unrelated, const Labels& unrelated_targets, double beta) {
  const Batch b = make_batch(model, fg);
  const Batch u = make_batch(model, unrelated, unrelated_targets);
  return kto_loss(model.theta(), b, ref.logits(b), u, ref.logits(u), beta);
}

// ---------------------------------------------------------------------------
// Composite objective

enum class Term { GA, FG, RT, FGKL, RTKL, NPO, DPO, KTO };
inline constexpr std::size_t kTermCount = 8;
inline constexpr std::array<std::string_view, kTermCount> kTermNames = {
    "ga", "fg", "rt", "fg_kl", "rt_kl", "npo", "dpo", "kto"};

/// Nonnegative coefficients of each term. K_FG enters the sum with a minus sign.
struct Weights {
  double ga = 0.0;
  double fg = 0.0;
  double rt = 0.0;
  double fg_kl = 0.0;
  double rt_kl = 0.0;
  double npo = 0.0;
  double dpo = 0.0;
  double kto = 0.0;

  std::array<double, kTermCount> as_array() const { return {ga, fg, rt, fg_kl, rt_kl, npo, dpo, kto}; }

  double& operator[](Term t) {
    switch (t) {
      case Term::GA: return ga;
      case Term::FG: return fg;
      case Term::RT: return rt;
      case Term::FGKL: return fg_kl;
      case Term::RTKL: return rt_kl;
      case Term::NPO: return npo;
      case Term::DPO: return dpo;
      case Term::KTO: return kto;
    }
    throw InternalError("Weights: bad term");
  }

  friend bool operator==(const Weights&, const Weights&) = default;
};

inline Term term_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kTermCount; ++i) {
    if (kTermNames[i] == name) return static_cast<Term>(i);
  }
  throw ConfigError("unknown loss term '" + std::string(name) + "'");
}

/// Named method presets (GA-family rows follow the GA/GA+RT/GA+KL/IDK+RT
/// coefficient table; the preference-style methods use unit weights).
inline Weights preset_weights(std::string_view method) {
  Weights w;
  if (method == "GA") {
    w.ga = 1;
  } else if (method == "GA+RT") {
    w.ga = 1, w.rt = 1;
  } else if (method == "GA+KL") {
    w.ga = 1, w.rt_kl = 1;
  } else if (method == "IDK+RT") {
    w.fg = 1, w.rt = 1;
  } else if (method == "NPO") {
    w.npo = 1;
  } else if (method == "NPO+RT") {
    w.npo = 1, w.rt = 1;
  } else if (method == "DPO+RT") {
    w.dpo = 1, w.rt = 1;
  } else if (method == "DPO+KL") {
    w.dpo = 1, w.rt_kl = 1;
  } else if (method == "KTO") {
    w.kto = 1;
  } else if (method == "KTO+RT") {
    w.kto = 1, w.rt = 1;
  } else if (method == "RT") {
    w.rt = 1;
  } else {
    throw ConfigError("unknown method preset '" + std::string(method) + "'");
  }
  return w;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"GA",  "GA+RT",  "GA+KL",  "IDK+RT", "NPO", "NPO+RT",
                                                 "DPO+RT", "DPO+KL", "KTO", "KTO+RT", "RT"};
  return names;
}

template <ParametricModel M>
struct ObjectiveSpec {
  Weights weights;
  double beta = 1.0;
  Reference<M> reference;
  std::optional<Labels> surrogate_targets;  // Bern(0.5) labels on D_FG

  void validate() const {
    const auto w = weights.as_array();
    bool any = false;
    for (std::size_t i = 0; i < kTermCount; ++i) {
      if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
        throw ConfigError("ObjectiveSpec: weight '" + std::string(kTermNames[i]) + "' must be finite and >= 0");
      }
      any = any || w[i] > 0.0;
    }
    if (!any) throw ConfigError("ObjectiveSpec: at least one weight must be > 0");
    if ((weights.npo > 0 || weights.dpo > 0 || weights.kto > 0) && (!(beta > 0.0) || !std::isfinite(beta))) {
      throw ConfigError("ObjectiveSpec: beta must be > 0 when NPO/DPO/KTO is active");
    }
    if ((weights.fg > 0 || weights.dpo > 0 || weights.kto > 0) && !surrogate_targets) {
      throw ConfigError("ObjectiveSpec: surrogate targets required for FG/DPO/KTO terms");
    }
  }

  bool needs_forget() const {
    return weights.ga > 0 || weights.fg > 0 || weights.fg_kl > 0 || weights.npo > 0 || weights.dpo > 0 ||
           weights.kto > 0;
  }
  bool needs_retain() const { return weights.rt > 0 || weights.rt_kl > 0; }
};

struct CompositeValue {
  double value = 0.0;
  Vector grad;
  std::array<double, kTermCount> terms{};  // unweighted term values; 0 for inactive terms
};

/// Composite objective bound to fixed forget/retain batches. Reference logits
/// are computed once at construction.
template <ParametricModel M>
class CompositeObjective {
 public:
  CompositeObjective(ObjectiveSpec<M> spec, std::optional<Batch> forget, std::optional<Batch> retain)
      : spec_(std::move(spec)), forget_(std::move(forget)), retain_(std::move(retain)) {
    spec_.validate();
    if (spec_.needs_forget() && !forget_) throw ConfigError("composite: active term requires D_FG");
    if (spec_.needs_retain() && !retain_) throw ConfigError("composite: active term requires D_RT");
    if (forget_) {
      ref_forget_ = spec_.reference.logits(*forget_);
      if (spec_.surrogate_targets) {
        if (spec_.surrogate_targets->size() != forget_->size()) {
          throw ConfigError("composite: surrogate targets length differs from D_FG");
        }
        unrelated_ = Batch{forget_->phi, *spec_.surrogate_targets};
      }
    }
    if (retain_) ref_retain_ = spec_.reference.logits(*retain_);
  }

  CompositeObjective(const ObjectiveSpec<M>& spec, const M& model, const Dataset* forget, const Dataset* retain)
      : CompositeObjective(spec, forget ? std::optional<Batch>(make_batch(model, *forget)) : std::nullopt,
                           retain ? std::optional<Batch>(make_batch(model, *retain)) : std::nullopt) {}

  const ObjectiveSpec<M>& spec() const { return spec_; }
  const std::optional<Batch>& forget() const { return forget_; }
  const std::optional<Batch>& retain() const { return retain_; }

  CompositeValue evaluate(const Vector& theta) const {
    CompositeValue out;
    out.grad = Vector::Zero(theta.size());
    const Weights& w = spec_.weights;
    auto add = [&](Term t, double coeff, LossValue lv) {
      out.terms[static_cast<std::size_t>(t)] = lv.value;
      out.value += coeff * lv.value;
      out.grad += coeff * lv.grad;
    };
    if (w.ga > 0) add(Term::GA, w.ga, ga_loss(theta, *forget_));
    if (w.fg > 0) add(Term::FG, w.fg, fg_loss(theta, *forget_, *spec_.surrogate_targets));
    if (w.rt > 0) add(Term::RT, w.rt, rt_loss(theta, *retain_));
    if (w.fg_kl > 0) add(Term::FGKL, -w.fg_kl, kl_reg(theta, *forget_, ref_forget_));
    if (w.rt_kl > 0) add(Term::RTKL, w.rt_kl, kl_reg(theta, *retain_, ref_retain_));
    if (w.npo > 0) add(Term::NPO, w.npo, npo_loss(theta, *forget_, ref_forget_, spec_.beta));
    if (w.dpo > 0) {
      add(Term::DPO, w.dpo, dpo_loss(theta, *forget_, ref_forget_, *spec_.surrogate_targets, spec_.beta));
    }
    if (w.kto > 0) {
      add(Term::KTO, w.kto, kto_loss(theta, *forget_, ref_forget_, *unrelated_, ref_forget_, spec_.beta));
    }
    return out;
  }

 private:
  ObjectiveSpec<M> spec_;
  std::optional<Batch> forget_;
  std::optional<Batch> retain_;
  std::optional<Batch> unrelated_;
  Vector ref_forget_;
  Vector ref_retain_;
};

/// One-shot composite evaluation. Either dataset may be null when no active
/// term needs it.
template <ParametricModel M>
CompositeValue composite(const ObjectiveSpec<M>& spec, const M& model, const Dataset* forget,
                         const Dataset* retain) {
  return CompositeObjective<M>(spec, model, forget, retain).evaluate(model.theta());
}

}  // namespace npo
