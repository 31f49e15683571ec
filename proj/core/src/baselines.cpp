#include "mdmsteer/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

namespace {

Sequence argmax_decode(const DenoiserOutput& mu) {
  std::vector<Token> tokens(static_cast<std::size_t>(mu.length));
  for (int i = 0; i < mu.length; ++i) {
    const auto row = mu.row(i);
    tokens[static_cast<std::size_t>(i)] = static_cast<Token>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return Sequence(std::move(tokens));
}

}  // namespace

Trajectory simulate_trajectory(const Denoiser& model, const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
                               CallCounter* counter, bool finetuned) {
  const Vocabulary& vocab = model.vocab();
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(grid.steps()) + 1);
  traj.states.push_back(MaskedSample{Sequence::all_masked(vocab, model.length()), 1.0});
  for (int i = grid.steps(); i >= 1; --i) {
    const MaskedSample& x = traj.states.back();
    const DenoiserOutput mu = model.predict_mean(x);
    count_model(counter, finetuned);
    MaskedSample next = sample_transition(vocab, mu, x, grid.time(i - 1), schedule, i == 1, rng);
    traj.log_probs.push_back(transition_logprob(vocab, mu, x, next, schedule, i == 1));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

void validate_trajectory(const Vocabulary& vocab, const Trajectory& traj) {
  if (traj.states.size() != traj.log_probs.size() + 1 || traj.states.empty()) {
    throw InvalidSample("trajectory needs one more state than steps");
  }
  for (std::size_t k = 1; k < traj.states.size(); ++k) {
    const auto& prev = traj.states[k - 1];
    const auto& cur = traj.states[k];
    if (!(cur.t < prev.t)) throw InvalidSample("trajectory times must strictly decrease");
    for (int i = 0; i < cur.seq.size(); ++i) {
      if (!vocab.is_mask(prev.seq[i]) && cur.seq[i] != prev.seq[i]) {
        throw InvalidSample("trajectory re-masks or mutates position " + std::to_string(i));
      }
    }
  }
  if (!traj.states.back().seq.is_clean(vocab)) throw InvalidSample("trajectory does not end clean");
}

Sequence best_of_n(const Denoiser& pre, const RewardModel& reward, int N, const TimeGrid& grid,
                   const NoiseSchedule& schedule, Rng& rng, CallCounter* counter) {
  if (N < 1) throw InvalidInput("best_of_n needs N >= 1");
  Sequence best;
  double best_score = 0.0;
  for (int j = 0; j < N; ++j) {
    Sequence x = ancestral_sample(pre, grid, schedule, rng, counter, false);
    const double score = reward.log_reward(x);
    count_reward(counter);
    if (j == 0 || score > best_score) {
      best = std::move(x);
      best_score = score;
    }
  }
  return best;
}

Sequence guided_particle_sample(const Denoiser& pre, const RewardModel& reward, int n_particles,
                                const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
                                CallCounter* counter, GuidanceSelection selection,
                                std::vector<CallCounter>* per_step) {
  if (n_particles < 1) throw InvalidInput("guided_particle_sample needs at least one particle");
  const Vocabulary& vocab = pre.vocab();
  MaskedSample x{Sequence::all_masked(vocab, pre.length()), 1.0};
  DenoiserOutput mu = pre.predict_mean(x);
  count_model(counter, false);
  if (per_step) per_step->clear();

  std::vector<MaskedSample> candidates(static_cast<std::size_t>(n_particles));
  std::vector<DenoiserOutput> predictions(static_cast<std::size_t>(n_particles));
  std::vector<double> scores(static_cast<std::size_t>(n_particles));
  for (int i = grid.steps(); i >= 1; --i) {
    CallCounter step;
    const double s = grid.time(i - 1);
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      candidates[j] = sample_transition(vocab, mu, x, s, schedule, i == 1, rng);
      predictions[j] = pre.predict_mean(candidates[j]);
      step.count_model(false);
      scores[j] = reward.log_reward(argmax_decode(predictions[j]));
      ++step.reward;
    }
    std::size_t pick = 0;
    if (n_particles > 1) {
      if (selection == GuidanceSelection::kArgmax) {
        const double best = *std::max_element(scores.begin(), scores.end());
        std::vector<std::size_t> ties;
        for (std::size_t j = 0; j < scores.size(); ++j) {
          if (scores[j] == best) ties.push_back(j);
        }
        pick = ties.front();
        if (ties.size() > 1) {
          pick = ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
        }
      } else {
        std::vector<double> probs = scores;
        softmax_inplace(probs);
        pick = static_cast<std::size_t>(categorical_from_uniform(probs, uniform01(rng)));
      }
    }
    x = candidates[pick];
    mu = std::move(predictions[pick]);
    if (counter) {
      counter->pretrained += step.pretrained;
      counter->reward += step.reward;
    }
    if (per_step) per_step->push_back(step);
  }
  return x.seq;
}

RtbLossEval rtb_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward, double log_z,
                     const Trajectory& traj, double detach_fraction, const NoiseSchedule& schedule, Rng& rng,
                     CallCounter* counter) {
  if (!(detach_fraction >= 0.0 && detach_fraction < 1.0)) throw InvalidInput("detach_fraction must be in [0,1)");
  const Vocabulary& vocab = q.vocab();
  validate_trajectory(vocab, traj);
  const int steps = traj.steps();

  std::vector<int> order(static_cast<std::size_t>(steps));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> detached(static_cast<std::size_t>(steps), false);
  const int n_detached = static_cast<int>(std::lround(detach_fraction * steps));
  for (int k = 0; k < n_detached; ++k) detached[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = true;

  std::vector<ForwardPass> passes;
  passes.reserve(static_cast<std::size_t>(steps));
  double sum = log_z;
  for (int k = 0; k < steps; ++k) {
    const MaskedSample& from = traj.states[static_cast<std::size_t>(k)];
    const MaskedSample& to = traj.states[static_cast<std::size_t>(k) + 1];
    const bool last = k == steps - 1;
    ForwardPass qpass = q.forward(from);
    count_model(counter, true);
    const DenoiserOutput pmu = pre.predict_mean(from);
    count_model(counter, false);
    const double lq = transition_logprob(vocab, qpass.out, from, to, schedule, last);
    const double lp = transition_logprob(vocab, pmu, from, to, schedule, last);
    if (is_neg_inf(lp)) throw InvalidSample("trajectory has zero probability under the pretrained model");
    if (is_neg_inf(lq)) throw InvalidSample("trajectory has zero probability under the fine-tuned model");
    sum += lq - lp;
    passes.push_back(std::move(qpass));
  }
  sum -= reward.log_reward(traj.endpoint());
  count_reward(counter);

  RtbLossEval out;
  out.residual = sum;
  out.value = sum * sum;
  out.dlog_z = 2.0 * sum;
  out.grad.assign(q.num_params(), 0.0);
  std::vector<double> dlogits(static_cast<std::size_t>(q.length()) * static_cast<std::size_t>(q.classes()));
  for (int k = 0; k < steps; ++k) {
    if (detached[static_cast<std::size_t>(k)]) continue;
    std::fill(dlogits.begin(), dlogits.end(), 0.0);
    transition_logprob_dlogits(vocab, passes[static_cast<std::size_t>(k)].out, traj.states[static_cast<std::size_t>(k)],
                               traj.states[static_cast<std::size_t>(k) + 1], 2.0 * sum, dlogits);
    q.backward(passes[static_cast<std::size_t>(k)], dlogits, out.grad);
  }
  return out;
}

}  // namespace mdmsteer
