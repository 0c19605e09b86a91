#pragma once

#include <cmath>
#include <numbers>

#include "mvbev/error.hpp"
#include "mvbev/tinynet.hpp"

namespace mvbev {

struct SgdConfig {
  double momentum = 0.5;
  double weight_decay = 5e-4;
  double clip_norm = 0.0;  // global gradient L2 cap; 0 disables
};

template <typename Real>
double grad_norm(const ParameterSet<Real>& grads) {
  double sum = 0.0;
  for (const auto& t : grads.tensors)
    for (Real g : t.vec()) sum += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sum);
}

/// Heavy-ball SGD with coupled L2:  v <- m v + (g + wd p);  p <- p - lr v.
/// `velocity` starts empty and is lazily zero-initialised. With clip_norm > 0
/// the gradient is rescaled so its global L2 norm is at most clip_norm.
template <typename Real>
void sgd_step(ParameterSet<Real>& params, const ParameterSet<Real>& grads, double lr,
              const SgdConfig& cfg, ParameterSet<Real>& velocity) {
  require_same_layout(params, grads, "sgd_step");
  if (velocity.size() == 0) velocity = params.zeros_like();
  require_same_layout(params, velocity, "sgd_step velocity");
  const Real m = static_cast<Real>(cfg.momentum);
  const Real wd = static_cast<Real>(cfg.weight_decay);
  const Real step = static_cast<Real>(lr);
  Real scale = 1;
  if (cfg.clip_norm > 0) {
    const double norm = grad_norm(grads);
    if (norm > cfg.clip_norm) scale = static_cast<Real>(cfg.clip_norm / norm);
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params.tensors[t];
    auto& v = velocity.tensors[t];
    const auto& g = grads.tensors[t];
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = m * v[k] + (scale * g[k] + wd * p[k]);
      p[k] -= step * v[k];
    }
  }
}

/// One-cycle schedule: linear warm-up from max_lr/25 to max_lr over the
/// first 30% of steps, then cosine annealing to max_lr/(25 * 1e4).
inline double one_cycle_lr(int step, int total_steps, double max_lr) {
  if (total_steps < 1 || step < 0 || step >= total_steps)
    throw StepOutOfRange("step " + std::to_string(step) + " not in [0, " +
                         std::to_string(total_steps) + ")");
  constexpr double div = 25.0, final_div = 1e4;
  const double initial = max_lr / div;
  const double final_lr = initial / final_div;
  const int peak = static_cast<int>(std::floor(0.3 * total_steps));
  if (step == peak) return max_lr;
  if (step < peak) {
    return initial + (max_lr - initial) * static_cast<double>(step) / peak;
  }
  const int span = total_steps - 1 - peak;
  const double frac = static_cast<double>(step - peak) / span;
  return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace mvbev
