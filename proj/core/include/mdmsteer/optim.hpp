#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mdmsteer {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  static AdamState for_params(std::size_t count, double lr);
};

// One bias-corrected Adam update. Throws TrainingError on a non-finite
// gradient entry, leaving params and state untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

struct EmaState {
  double decay = 0.9999;
  std::vector<double> shadow;

  static EmaState for_params(std::span<const double> params, double decay);
};

// shadow <- decay * shadow + (1 - decay) * params
void ema_update(EmaState& ema, std::span<const double> params);

// Value and gradient of a loss at the current parameters. The closure must
// be deterministic (fixed random draws).
struct LossEval {
  double value = 0.0;
  std::vector<double> grad;
};
using LossClosure = std::function<LossEval()>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares the closure's reverse-mode gradient with central finite
// differences over every entry of params (perturbed in place and restored).
// Relative error is |a - f| / max(|a|, |f|, floor).
GradCheckReport grad_check(std::span<double> params, const LossClosure& loss, double eps = 1e-4,
                           double floor = 1e-6);

}  // namespace mdmsteer
