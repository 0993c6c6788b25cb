#include "guilt/model/optim.hpp"

#include <algorithm>
#include <cmath>

namespace guilt::model {

AdamW::AdamW(const ParamStore& store, const AdamWConfig& config) : config_(config) {
  for (const auto& p : store) {
    m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void AdamW::step(ParamStore& store, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const double step_size = lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    if (p.decay && config_.weight_decay > 0.0) p.value *= 1.0 - lr * config_.weight_decay;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    const auto denom = (v_[i].array().sqrt() / sqrt_bc2) + config_.eps;
    p.value.array() -= step_size * m_[i].array() / denom;
  }
}

double linear_warmup_decay(std::size_t step, std::size_t warmup, std::size_t total) {
  if (step < warmup) return static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, warmup));
  if (step >= total) return 0.0;
  return static_cast<double>(total - step) / static_cast<double>(std::max<std::size_t>(1, total - warmup));
}

std::size_t warmup_steps(double ratio, std::size_t total) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(total)));
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  const double norm = std::sqrt(store.grad_norm_squared());
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (auto& p : store) p.grad *= scale;
  }
  return norm;
}

}  // namespace guilt::model
