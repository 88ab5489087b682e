#include "pasfuse/trainer/optim.hpp"

#include <algorithm>

namespace pasfuse {

Adam::Adam(ParameterSet& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  for (const auto& e : params.entries()) {
    m_.push_back(Buffer<float>::Zero(e.value.size()));
    v_.push_back(Buffer<float>::Zero(e.value.size()));
  }
}

void Adam::step(double lr) {
  ++step_;
  const auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    FTensor p = entries[i].value;
    if (p.has_grad()) {
      adam_step(p.data(), p.grad(), m_[i], v_[i], step_, lr, cfg_);
    } else {
      const Buffer<float> zero = Buffer<float>::Zero(p.size());
      adam_step(p.data(), zero, m_[i], v_[i], step_, lr, cfg_);
    }
  }
}

TensorDict Adam::state() const {
  TensorDict out;
  const auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out["m/" + entries[i].name] = FTensor(entries[i].value.shape(), m_[i]);
    out["v/" + entries[i].name] = FTensor(entries[i].value.shape(), v_[i]);
  }
  // float holds step counts exactly up to 2^24
  out["step"] = FTensor::scalar(static_cast<float>(step_));
  return out;
}

void Adam::load_state(const TensorDict& state) {
  const auto& entries = params_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"m/", &m_[i]}, std::pair{"v/", &v_[i]}}) {
      auto it = state.find(prefix + entries[i].name);
      if (it == state.end() || it->second.size() != entries[i].value.size())
        throw FormatError("optimizer state missing or mis-shaped for " + entries[i].name);
      *dst = it->second.data();
    }
  }
  auto it = state.find("step");
  if (it == state.end()) throw FormatError("optimizer state has no step count");
  step_ = static_cast<long>(it->second.item());
}

PlateauScheduler::PlateauScheduler(SchedulerConfig cfg) : cfg_(cfg) {
  if (!(cfg.factor > 0 && cfg.factor < 1)) throw std::invalid_argument("scheduler factor must be in (0,1)");
  if (cfg.patience < 1) throw std::invalid_argument("scheduler patience must be >= 1");
}

double PlateauScheduler::step(double val_loss, double lr) {
  if (!cfg_.enabled) return lr;
  if (val_loss < best_ - cfg_.threshold) {
    best_ = val_loss;
    bad_ = 0;
    return lr;
  }
  if (++bad_ >= cfg_.patience) {
    bad_ = 0;
    return std::max(lr * cfg_.factor, std::min(lr, cfg_.min_lr));
  }
  return lr;
}

}  // namespace pasfuse
