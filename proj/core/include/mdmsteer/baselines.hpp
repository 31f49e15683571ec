#pragma once

#include <vector>

#include "mdmsteer/core.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/objectives.hpp"
#include "mdmsteer/reward.hpp"

namespace mdmsteer {

struct CallCounter;

// States from t = 1 (all masked) down to t = 0 (clean) on a grid, with the
// log-probability of each step under the generating model.
struct Trajectory {
  std::vector<MaskedSample> states;
  std::vector<double> log_probs;

  int steps() const { return static_cast<int>(log_probs.size()); }
  const Sequence& endpoint() const { return states.back().seq; }
};

Trajectory simulate_trajectory(const Denoiser& model, const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
                               CallCounter* counter = nullptr, bool finetuned = true);

// Checks decreasing times, monotone unmasking and a clean final state.
// Throws InvalidSample with the first violation.
void validate_trajectory(const Vocabulary& vocab, const Trajectory& traj);

// N independent ancestral samples from the model; the first one with the
// highest log R wins.
Sequence best_of_n(const Denoiser& pre, const RewardModel& reward, int N, const TimeGrid& grid,
                   const NoiseSchedule& schedule, Rng& rng, CallCounter* counter = nullptr);

enum class GuidanceSelection { kArgmax, kSoftmax };

// Value-guided particle inference: at each reverse step draw n_particles
// candidate next states from the model's transition, score each by the log
// reward of the argmax decode of the model's prediction at the candidate,
// and continue from the best one (or a softmax-weighted draw). The chosen
// candidate's prediction drives the next step, so each step costs exactly
// n_particles model calls after one initial evaluation at t = 1. per_step,
// when given, receives the calls made by each step.
Sequence guided_particle_sample(const Denoiser& pre, const RewardModel& reward, int n_particles,
                                const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
                                CallCounter* counter = nullptr,
                                GuidanceSelection selection = GuidanceSelection::kArgmax,
                                std::vector<CallCounter>* per_step = nullptr);

struct RtbLossEval {
  double value = 0.0;
  double residual = 0.0;
  std::vector<double> grad;  // w.r.t. q's parameters
  double dlog_z = 0.0;
};

// Squared relative trajectory balance residual
//   log_z + sum log q(x_{i-1}|x_i) - sum log p_pre(x_{i-1}|x_i) - log R(x0).
// round(detach_fraction * T) uniformly chosen steps contribute to the value
// but not to the gradient. Throws InvalidSample when the pretrained model
// cannot produce the trajectory.
RtbLossEval rtb_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward, double log_z,
                     const Trajectory& traj, double detach_fraction, const NoiseSchedule& schedule, Rng& rng,
                     CallCounter* counter = nullptr);

}  // namespace mdmsteer
