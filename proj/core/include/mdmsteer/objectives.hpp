#pragma once

#include <span>
#include <vector>

#include "mdmsteer/core.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/grad_estimator.hpp"
#include "mdmsteer/optim.hpp"
#include "mdmsteer/reward.hpp"

namespace mdmsteer {

struct CallCounter;

// A squared-residual loss together with the residual itself, so callers can
// route dLoss/dlogZ = 2 r into whatever produced logZ.
struct ResidualLossEval {
  double value = 0.0;
  double residual = 0.0;
  std::vector<double> grad;
};

// ---------------------------------------------------------------- ELBO

// Negative-ELBO integrand at a fixed corruption: w(t) * sum over masked i of
// -log mu[i][x0_i], w(t) = -alpha'(t) / (1 - alpha(t)).
LossEval elbo_loss_at(const Denoiser& model, const Sequence& x0, const MaskedSample& xt,
                      const NoiseSchedule& schedule, bool want_grad = true);

// Single-sample unbiased estimate of the negative ELBO: t ~ U[0,1],
// xt ~ forward(x0, t). Draws with 1 - alpha(t) = 0 are rejected.
LossEval elbo_loss(const Denoiser& model, const Sequence& x0, const NoiseSchedule& schedule, Rng& rng,
                   bool want_grad = true);

// ---------------------------------------------------------------- log Z estimators

// log of the mean reward over M factorized endpoint draws from the model's
// posterior at xt. One model call for the whole draw batch.
double logz_mc(const Denoiser& pre, const MaskedSample& xt, int M, const RewardModel& reward, Rng& rng,
               CallCounter* counter = nullptr);

struct IsEstimate {
  double log_z = 0.0;
  std::vector<Sequence> draws;
  std::vector<double> log_weights;
  // The pretrained prediction at xt, reusable by the caller.
  DenoiserOutput pre_mu;
};

// Importance-sampled log Z with the proposal's endpoint posterior. The
// proposal draws its M endpoints from one evaluation; each weight evaluates
// the pretrained model once (M pretrained calls). Throws EstimatorDegenerate
// when every weight is -inf.
IsEstimate logz_is_detailed(const Denoiser& pre, const Denoiser& proposal, const MaskedSample& xt, int M,
                            const RewardModel& reward, Rng& rng, CallCounter* counter = nullptr);
double logz_is(const Denoiser& pre, const Denoiser& proposal, const MaskedSample& xt, int M,
               const RewardModel& reward, Rng& rng, CallCounter* counter = nullptr);

// Mean over endpoints of log p_pre(x0|xt) + log R(x0) - log q(x0|xt): the
// constant C minimizing the batch squared-residual loss. Throws
// InvalidSample on a -inf term.
double batch_optimal_logz(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                           const MaskedSample& xt, std::span<const Sequence> endpoints);

// ---------------------------------------------------------------- DDPP losses

// r = log q(x0|xt) - log p_pre(x0|xt) - log R(x0) + log_z; returns r^2 with
// gradient into q only. Throws InvalidSample on a -inf endpoint probability.
ResidualLossEval ddpp_single_step_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                                       const Sequence& x0, const MaskedSample& xt, double log_z,
                                       CallCounter* counter = nullptr);

// Same, with the pretrained prediction at xt already evaluated.
ResidualLossEval ddpp_single_step_loss(const Denoiser& q, const DenoiserOutput& pre_mu, const RewardModel& reward,
                                       const Sequence& x0, const MaskedSample& xt, double log_z,
                                       CallCounter* counter = nullptr);

// Frozen random draws of one reverse-KL evaluation: the corrupted input, the
// K one-hot endpoint draws and q's log-probabilities when they were drawn
// (the estimator's reference point).
struct KlDraws {
  MaskedSample xt;
  std::vector<Sequence> endpoints;
  std::vector<double> ref_log_probs;
};

// Surrogate whose value is
//   (1/K) sum_k [ log q(x_k|xt) - log p_pre(x_k|xt) - relaxed log R(x_k) ]
// at q's reference parameters and whose exact gradient is the estimator's
// gradient of that expectation.
LossEval ddpp_kl_surrogate(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                           const KlDraws& draws, GradEstimatorKind estimator, double tau = 1.0,
                           CallCounter* counter = nullptr);

// On-policy x0 ~ q (ancestral on the grid, no gradient through the rollout),
// t ~ U[0,1], xt ~ forward(x0, t), K endpoint draws from q(.|xt), then the
// surrogate above. log Z is a constant and omitted.
LossEval ddpp_kl_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward, int K,
                      GradEstimatorKind estimator, const NoiseSchedule& schedule, const TimeGrid& grid, Rng& rng,
                      CallCounter* counter = nullptr, double tau = 1.0, KlDraws* draws_out = nullptr);

// Bridge-sampled sub-trajectory residual over the lattice of steps of size
// gamma (t must be a multiple of gamma): s = j * gamma with j uniform in
// {1, ..., t / gamma}, x_s and x_{s-gamma} bridged from (x0, xt),
//   r = (t / gamma) * mean[log q(x_{s-gamma}|x_s) - log p_pre(x_{s-gamma}|x_s)]
//       + log_z - log R(x0),
// the mean running over inner_draws independent (s, x_s, x_{s-gamma}).
// t / gamma times the uniform step average is the sum over all steps, so the
// bracket estimates the whole sub-trajectory log-ratio. inner_draws = 0
// instead bridges one path through every lattice point and sums its t / gamma
// steps exactly, which makes r vanish at the exact solution. Returns r^2
// with gradient into q.
ResidualLossEval ddpp_subtrajectory_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                                         const Sequence& x0, const MaskedSample& xt, double gamma, double log_z,
                                         const NoiseSchedule& schedule, Rng& rng, int inner_draws = 1,
                                         CallCounter* counter = nullptr);

}  // namespace mdmsteer
