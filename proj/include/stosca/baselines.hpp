#pragma once

// First-order reference optimizers: SGD with the quadratic step decay, Adagrad,
// RMSProp and Adam. All of them minimize the same regularized objective as SCA;
// the regularizer enters through its (sub)gradient.

#include <cmath>
#include <string>

#include "stosca/data.hpp"
#include "stosca/nn.hpp"
#include "stosca/objective.hpp"
#include "stosca/sca_engine.hpp"
#include "stosca/training.hpp"
#include "stosca/types.hpp"

namespace stosca {

enum class BaselineKind { Sgd, Adagrad, RmsProp, Adam };

inline std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Sgd: return "sgd";
    case BaselineKind::Adagrad: return "adagrad";
    case BaselineKind::RmsProp: return "rmsprop";
    case BaselineKind::Adam: return "adam";
  }
  return "?";
}

struct BaselineConfig {
  BaselineKind kind = BaselineKind::Sgd;
  double rate = 0.1;        // initial step for SGD, learning rate otherwise
  double decay = 0.01;      // SGD: eps of the quadratic step rule
  double gamma = 0.9;       // RMSProp moving-average weight
  double beta1 = 0.9;       // Adam
  double beta2 = 0.999;     // Adam
  double stability = 1e-8;  // added to the root of the second-moment estimate

  static BaselineConfig sgd(double alpha0 = 0.1, double eps = 0.01) {
    BaselineConfig c;
    c.kind = BaselineKind::Sgd;
    c.rate = alpha0;
    c.decay = eps;
    return c;
  }
  static BaselineConfig adagrad(double rate = 0.01) {
    BaselineConfig c;
    c.kind = BaselineKind::Adagrad;
    c.rate = rate;
    return c;
  }
  static BaselineConfig rmsprop(double rate = 0.01, double gamma = 0.9) {
    BaselineConfig c;
    c.kind = BaselineKind::RmsProp;
    c.rate = rate;
    c.gamma = gamma;
    return c;
  }
  static BaselineConfig adam(double rate = 0.001, double beta1 = 0.9, double beta2 = 0.999, double stability = 1e-8) {
    BaselineConfig c;
    c.kind = BaselineKind::Adam;
    c.rate = rate;
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.stability = stability;
    return c;
  }

  void validate() const {
    if (!(rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(stability > 0.0)) throw std::invalid_argument("stability constant must be positive");
    if (kind == BaselineKind::Sgd && (decay < 0.0 || decay * rate >= 1.0)) {
      throw std::invalid_argument("SGD decay needs 0 <= eps < 1/alpha0");
    }
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0,1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("Adam moment weights must lie in [0,1)");
    }
  }
};

inline Vector sgd_step(const Vector& w, const Vector& grad, double alpha) {
  detail::require_dim(grad.size(), w.size(), "gradient length");
  return w - alpha * grad;
}

struct AdagradState {
  Vector w;
  Vector accum;  // running sum of squared gradients

  static AdagradState start(Vector w0) {
    AdagradState s;
    s.accum = Vector::Zero(w0.size());
    s.w = std::move(w0);
    return s;
  }
};

inline AdagradState adagrad_step(AdagradState s, const Vector& grad, double rate, double stability = 1e-8) {
  detail::require_dim(grad.size(), s.w.size(), "gradient length");
  s.accum += grad.cwiseAbs2();
  s.w.array() -= rate * grad.array() / (s.accum.array().sqrt() + stability);
  return s;
}

struct RmsPropState {
  Vector w;
  Vector mean_square;

  static RmsPropState start(Vector w0) {
    RmsPropState s;
    s.mean_square = Vector::Zero(w0.size());
    s.w = std::move(w0);
    return s;
  }
};

inline RmsPropState rmsprop_step(RmsPropState s, const Vector& grad, double rate, double gamma = 0.9,
                                 double stability = 1e-8) {
  detail::require_dim(grad.size(), s.w.size(), "gradient length");
  s.mean_square = gamma * s.mean_square + (1.0 - gamma) * grad.cwiseAbs2();
  s.w.array() -= rate * grad.array() / (s.mean_square.array().sqrt() + stability);
  return s;
}

struct AdamState {
  Vector w;
  Vector m;
  Vector v;
  Index t = 0;

  static AdamState start(Vector w0) {
    AdamState s;
    s.m = Vector::Zero(w0.size());
    s.v = Vector::Zero(w0.size());
    s.w = std::move(w0);
    return s;
  }
};

inline AdamState adam_step(AdamState s, const Vector& grad, double rate = 0.001, double beta1 = 0.9,
                           double beta2 = 0.999, double stability = 1e-8) {
  detail::require_dim(grad.size(), s.w.size(), "gradient length");
  s.t += 1;
  s.m = beta1 * s.m + (1.0 - beta1) * grad;
  s.v = beta2 * s.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
  s.w.array() -= rate * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + stability);
  return s;
}

/// Mini-batch loss gradient plus lambda times the regularizer (sub)gradient.
inline Vector regularized_gradient(const MlpModel& model, const MiniBatch& batch, LossKind loss,
                                   const Regularizer& reg) {
  Vector g = batch_gradient(model, batch, loss);
  if (reg.lambda == 0.0) return g;
  if (const auto* m = std::get_if<ManifoldPenalty>(&reg.penalty)) {
    const double scale = static_cast<double>(m->graph->size()) / static_cast<double>(batch.size());
    g += reg.lambda * manifold_gradient(*m, model, batch.indices, scale);
  } else {
    g += reg.lambda * regularizer_subgradient(reg, model.weights());
  }
  return g;
}

/// Trains with a baseline optimizer over the same batch stream and evaluation subset that
/// SCA uses for the same LoopSettings.
inline TrainResult train_baseline(const MlpModel& model, const Dataset& train_set, const BaselineConfig& cfg,
                                  const LoopSettings& loop, LossKind loss, const Regularizer& reg) {
  cfg.validate();
  detail::check_loss_head(model, loss);
  const Vector w0 = model.weights();
  double alpha = cfg.rate;
  AdagradState ada = AdagradState::start(w0);
  RmsPropState rms = RmsPropState::start(w0);
  AdamState adam = AdamState::start(w0);
  auto step = [&](Vector& w, const MiniBatch& batch, Index) {
    const Vector g = regularized_gradient(model.with_weights(w), batch, loss, reg);
    switch (cfg.kind) {
      case BaselineKind::Sgd:
        w = sgd_step(w, g, alpha);
        alpha = cfg.decay > 0.0 ? step_size_next(alpha, cfg.decay) : alpha;
        break;
      case BaselineKind::Adagrad:
        ada.w = w;
        ada = adagrad_step(std::move(ada), g, cfg.rate, cfg.stability);
        w = ada.w;
        break;
      case BaselineKind::RmsProp:
        rms.w = w;
        rms = rmsprop_step(std::move(rms), g, cfg.rate, cfg.gamma, cfg.stability);
        w = rms.w;
        break;
      case BaselineKind::Adam:
        adam.w = w;
        adam = adam_step(std::move(adam), g, cfg.rate, cfg.beta1, cfg.beta2, cfg.stability);
        w = adam.w;
        break;
    }
  };
  TrainResult res = run_training_loop(model, train_set, loop, loss, reg, std::string(to_string(cfg.kind)), step);
  res.record.info["rate"] = std::to_string(cfg.rate);
  if (cfg.kind == BaselineKind::Sgd) res.record.info["decay"] = std::to_string(cfg.decay);
  if (cfg.kind == BaselineKind::RmsProp) res.record.info["gamma"] = std::to_string(cfg.gamma);
  if (cfg.kind == BaselineKind::Adam) {
    res.record.info["beta1"] = std::to_string(cfg.beta1);
    res.record.info["beta2"] = std::to_string(cfg.beta2);
    res.record.info["stability"] = std::to_string(cfg.stability);
  }
  return res;
}

}  // namespace stosca
