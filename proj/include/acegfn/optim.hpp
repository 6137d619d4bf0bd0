#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "acegfn/core/errors.hpp"

namespace acegfn {

// factor(t) goes linearly from start_factor to end_factor over
// [0, total_steps] and stays at end_factor afterwards.
struct LinearLrSchedule {
  double start_factor = 1.0;
  double end_factor = 1.0;
  long total_steps = 1;

  double factor(long step) const {
    if (total_steps <= 0 || step >= total_steps) return end_factor;
    const double frac = static_cast<double>(std::max(step, 0L)) / static_cast<double>(total_steps);
    return start_factor + (end_factor - start_factor) * frac;
  }
};

struct AdamWState {
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamWState() = default;
  AdamWState(std::size_t n, double lr_, double weight_decay_ = 0.0)
      : m(n, 0.0), v(n, 0.0), lr(lr_), weight_decay(weight_decay_) {}
};

// Decoupled weight decay Adam. Rejects the whole step (leaving params and
// moments untouched) if any gradient is non-finite.
inline void adamw_step(AdamWState& state, std::span<double> params, std::span<const double> grads,
                       double lr_factor = 1.0) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("adamw_step: shape mismatch");
  }
  for (double g : grads)
    if (!std::isfinite(g)) throw NumericalFailure("adamw_step", "non-finite gradient rejected by AdamW");
  ++state.step;
  const double lr = state.lr * lr_factor;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * state.weight_decay * params[i];
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

}  // namespace acegfn
