#include "mdmsteer/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mdmsteer/errors.hpp"

namespace mdmsteer {

AdamState AdamState::for_params(std::size_t count, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.assign(count, 0.0);
  s.v.assign(count, 0.0);
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvalidInput("adam_step: shape mismatch between parameters, gradients and moments");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw TrainingError("adam_step: non-finite gradient at parameter " + std::to_string(i) + " (value " +
                          std::to_string(grads[i]) + ")");
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

EmaState EmaState::for_params(std::span<const double> params, double decay) {
  EmaState e;
  e.decay = decay;
  e.shadow.assign(params.begin(), params.end());
  return e;
}

void ema_update(EmaState& ema, std::span<const double> params) {
  if (ema.shadow.size() != params.size()) throw InvalidInput("ema_update: shape mismatch");
  const double keep = ema.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    ema.shadow[i] = keep * ema.shadow[i] + (1.0 - keep) * params[i];
  }
}

GradCheckReport grad_check(std::span<double> params, const LossClosure& loss, double eps, double floor) {
  const LossEval base = loss();
  if (base.grad.size() != params.size()) throw InvalidInput("grad_check: gradient has wrong size");
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = loss().value;
    params[i] = saved - eps;
    const double down = loss().value;
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = base.grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic = analytic;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace mdmsteer
