#pragma once

#include "pasfuse/models/layers.hpp"

#include <cmath>

namespace pasfuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of a flat parameter; `step` is the 1-based
/// step count after this update.
template <typename S>
void adam_step(Buffer<S>& param, const Buffer<S>& grad, Buffer<S>& m, Buffer<S>& v, long step,
               double lr, const AdamConfig& cfg = {}) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ShapeError("adam_step: state shape mismatch");
  if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (Index i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<S>(mi);
    v[i] = static_cast<S>(vi);
    param[i] = static_cast<S>(param[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

/// Adam over every trainable entry of a parameter set. Parameters that
/// received no gradient are treated as having a zero gradient.
class Adam {
 public:
  explicit Adam(ParameterSet& params, AdamConfig cfg = {});

  void step(double lr);
  long steps() const { return step_; }

  /// "m/<name>", "v/<name>" and "step".
  TensorDict state() const;
  void load_state(const TensorDict& state);

 private:
  ParameterSet* params_;
  AdamConfig cfg_;
  std::vector<Buffer<float>> m_, v_;
  long step_ = 0;
};

struct SchedulerConfig {
  bool enabled = true;
  double factor = 0.1;
  int patience = 10;
  double min_lr = 1e-7;
  double threshold = 1e-4;  // absolute improvement required
};

/// Reduce-on-plateau over validation loss: after `patience` consecutive
/// epochs without an improvement larger than `threshold`, the rate is
/// multiplied by `factor` (floored at min_lr) and the counter resets.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(SchedulerConfig cfg = {});

  /// Returns the learning rate for the next epoch.
  double step(double val_loss, double lr);
  int bad_epochs() const { return bad_; }

 private:
  SchedulerConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace pasfuse
