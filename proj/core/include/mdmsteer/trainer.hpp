#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/core.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/grad_estimator.hpp"
#include "mdmsteer/logz_head.hpp"
#include "mdmsteer/optim.hpp"
#include "mdmsteer/replay_buffer.hpp"
#include "mdmsteer/reward.hpp"

namespace mdmsteer {

enum class Method { kPretrain, kDdppIs, kDdppLb, kDdppKl, kDdppSubtraj, kRtb };

std::string to_string(Method method);
Method method_from_string(const std::string& text);

// Supplies clean training sequences.
using DataSource = std::function<Sequence(Rng&)>;

struct TrainExample {
  Sequence x0;
  MaskedSample xt;
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  double mean_log_z = 0.0;
  int skipped = 0;
  bool warmup = false;
  CallCounter calls;
};

// One DDPP-LB update on a batch: residuals use log Z = head(xt). In warmup
// only the head moves; otherwise q and the head take one joint step with
// their own optimizers. Samples with zero probability are skipped and
// counted. grad_clip > 0 caps each gradient's norm.
StepMetrics ddpp_lb_train_step(Denoiser& q, LogZHead& head, const Denoiser& pre, const RewardModel& reward,
                               const std::vector<TrainExample>& batch, bool warmup, AdamState& q_opt,
                               AdamState& head_opt, CallCounter* counter = nullptr, double grad_clip = 0.0);

// Rescales grad in place so its Euclidean norm is at most max_norm (no-op
// for max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(std::span<double> grad, double max_norm);

struct PretrainOptions {
  int batch = 64;
  double lr = 3e-4;
  double ema_decay = 0.0;
  double grad_clip = 0.0;
};

class Pretrainer {
 public:
  Pretrainer(Denoiser& model, NoiseSchedule schedule, DataSource data, PretrainOptions options, std::uint64_t seed);

  // One Adam step on the batch-mean ELBO loss; returns that mean.
  double step();
  std::int64_t steps_done() const { return steps_; }
  AdamState& adam() { return adam_; }
  EmaState& ema() { return ema_; }
  bool has_ema() const { return options_.ema_decay > 0.0; }

 private:
  Denoiser& model_;
  NoiseSchedule schedule_;
  DataSource data_;
  PretrainOptions options_;
  std::uint64_t seed_;
  std::int64_t steps_ = 0;
  AdamState adam_;
  EmaState ema_;
};

struct FinetuneOptions {
  Method method = Method::kDdppLb;
  int batch = 16;
  int M = 16;
  int K = 8;
  double gamma = 0.0;  // <= 0 selects 1 / train_steps
  int subtraj_inner_draws = 1;
  int warmup_steps = 0;
  double lr_model = 4e-3;
  double lr_head = 4e-3;
  double grad_clip = 0.0;
  int buffer_capacity = 10000;
  int on_policy_every = 100;
  int data_every = 250;
  int refill_size = 64;
  double detach_fraction = 0.3;
  GradEstimatorKind estimator = GradEstimatorKind::kStraightThrough;
  double reinmax_tau = 1.0;
  int train_steps = 32;  // grid size for on-policy rollouts
  int head_embed = 16;
  int head_hidden = 64;
};

// Fine-tunes a copy of the pretrained model toward pi_0 ~ p_pre * R with one
// of the DDPP objectives or RTB. Off-policy methods draw x0 from a replay
// buffer that receives fresh on-policy samples every on_policy_every steps
// and data samples every data_every steps (both also at step 0).
class Finetuner {
 public:
  Finetuner(const Denoiser& pre, const RewardModel& reward, NoiseSchedule schedule, FinetuneOptions options,
            DataSource data, std::uint64_t seed, std::unique_ptr<Denoiser> init = nullptr);

  StepMetrics step();

  const FinetuneOptions& options() const { return options_; }
  std::int64_t steps_done() const { return steps_; }
  Denoiser& model() { return *q_; }
  const Denoiser& model() const { return *q_; }
  LogZHead& head() { return head_; }
  const LogZHead& head() const { return head_; }
  double log_z_scalar() const { return log_z_scalar_; }
  void set_log_z_scalar(double v) { log_z_scalar_ = v; }
  ReplayBuffer& buffer() { return buffer_; }
  AdamState& model_adam() { return q_opt_; }
  AdamState& head_adam() { return head_opt_; }
  double last_on_policy_log_reward() const { return last_on_policy_log_reward_; }

 private:
  void refill(Rng& rng);
  std::vector<TrainExample> draw_batch(Rng& rng);
  StepMetrics step_lb(Rng& rng, bool warmup);
  StepMetrics step_is(Rng& rng);
  StepMetrics step_subtraj(Rng& rng, bool warmup);
  StepMetrics step_kl(Rng& rng);
  StepMetrics step_rtb(Rng& rng);
  void apply_model_grad(std::vector<double>& grad);

  const Denoiser& pre_;
  const RewardModel& reward_;
  NoiseSchedule schedule_;
  FinetuneOptions options_;
  DataSource data_;
  std::uint64_t seed_;
  std::int64_t steps_ = 0;
  std::unique_ptr<Denoiser> q_;
  LogZHead head_;
  double log_z_scalar_ = 0.0;
  ReplayBuffer buffer_;
  AdamState q_opt_;
  AdamState head_opt_;
  AdamState scalar_opt_;
  double last_on_policy_log_reward_ = 0.0;
};

}  // namespace mdmsteer
