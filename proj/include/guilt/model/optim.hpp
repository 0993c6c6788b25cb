#pragma once

#include <cstddef>
#include <vector>

#include "guilt/model/params.hpp"

namespace guilt::model {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay; parameters flagged decay=false skip the
/// decay term.
class AdamW {
 public:
  AdamW(const ParamStore& store, const AdamWConfig& config);
  void step(ParamStore& store, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamWConfig config_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

/// Learning-rate multiplier: linear ramp over `warmup` steps then linear decay
/// to zero at `total`.
double linear_warmup_decay(std::size_t step, std::size_t warmup, std::size_t total);

/// ceil(ratio * total).
std::size_t warmup_steps(double ratio, std::size_t total);

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// pre-clipping norm. max_norm <= 0 disables clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

}  // namespace guilt::model
