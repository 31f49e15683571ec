#include "mdmsteer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mdmsteer/baselines.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/objectives.hpp"

namespace mdmsteer {

namespace {

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::kPretrain:
      return "pretrain";
    case Method::kDdppIs:
      return "ddpp-is";
    case Method::kDdppLb:
      return "ddpp-lb";
    case Method::kDdppKl:
      return "ddpp-kl";
    case Method::kDdppSubtraj:
      return "ddpp-subtraj";
    case Method::kRtb:
      return "rtb";
  }
  return "?";
}

Method method_from_string(const std::string& text) {
  for (Method m : {Method::kPretrain, Method::kDdppIs, Method::kDdppLb, Method::kDdppKl, Method::kDdppSubtraj,
                   Method::kRtb}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown method '" + text + "'");
}

double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

StepMetrics ddpp_lb_train_step(Denoiser& q, LogZHead& head, const Denoiser& pre, const RewardModel& reward,
                               const std::vector<TrainExample>& batch, bool warmup, AdamState& q_opt,
                               AdamState& head_opt, CallCounter* counter, double grad_clip) {
  if (batch.empty()) throw InvalidInput("ddpp_lb_train_step needs a nonempty batch");
  StepMetrics m;
  m.warmup = warmup;
  std::vector<double> q_grad(q.num_params(), 0.0);
  std::vector<double> head_grad(head.num_params(), 0.0);
  std::vector<std::pair<double, LogZHead::Pass>> used;
  for (const auto& ex : batch) {
    LogZHead::Pass hp = head.forward(ex.xt);
    try {
      ResidualLossEval l = ddpp_single_step_loss(q, pre, reward, ex.x0, ex.xt, hp.value, counter);
      m.loss += l.value;
      m.mean_log_z += hp.value;
      axpy(1.0, l.grad, q_grad);
      used.emplace_back(l.residual, std::move(hp));
    } catch (const InvalidSample&) {
      ++m.skipped;
    }
  }
  if (used.empty()) return m;
  const double inv = 1.0 / static_cast<double>(used.size());
  m.loss *= inv;
  m.mean_log_z *= inv;
  for (const auto& [r, hp] : used) head.backward(hp, 2.0 * r * inv, head_grad);
  clip_grad_norm(head_grad, grad_clip);
  adam_step(head.params(), head_grad, head_opt);
  if (!warmup) {
    for (double& g : q_grad) g *= inv;
    clip_grad_norm(q_grad, grad_clip);
    adam_step(q.params(), q_grad, q_opt);
  }
  return m;
}

// ---------------------------------------------------------------- pretraining

Pretrainer::Pretrainer(Denoiser& model, NoiseSchedule schedule, DataSource data, PretrainOptions options,
                       std::uint64_t seed)
    : model_(model),
      schedule_(schedule),
      data_(std::move(data)),
      options_(options),
      seed_(seed),
      adam_(AdamState::for_params(model.num_params(), options.lr)) {
  if (options.batch < 1) throw ConfigError("pretrain batch must be positive");
  if (!data_) throw ConfigError("pretraining needs a data source");
  if (has_ema()) ema_ = EmaState::for_params(model.params(), options.ema_decay);
}

double Pretrainer::step() {
  Rng rng = make_stream(seed_, "pretrain", static_cast<std::uint64_t>(steps_));
  std::vector<double> grad(model_.num_params(), 0.0);
  double loss = 0.0;
  const double inv = 1.0 / options_.batch;
  for (int b = 0; b < options_.batch; ++b) {
    const Sequence x0 = data_(rng);
    LossEval l = elbo_loss(model_, x0, schedule_, rng);
    loss += inv * l.value;
    axpy(inv, l.grad, grad);
  }
  clip_grad_norm(grad, options_.grad_clip);
  adam_step(model_.params(), grad, adam_);
  if (has_ema()) ema_update(ema_, model_.params());
  ++steps_;
  return loss;
}

// ---------------------------------------------------------------- fine-tuning

Finetuner::Finetuner(const Denoiser& pre, const RewardModel& reward, NoiseSchedule schedule, FinetuneOptions options,
                     DataSource data, std::uint64_t seed, std::unique_ptr<Denoiser> init)
    : pre_(pre),
      reward_(reward),
      schedule_(schedule),
      options_(options),
      data_(std::move(data)),
      seed_(seed),
      q_(init ? std::move(init) : pre.clone()),
      head_(pre.vocab(), pre.length(), options.head_embed, options.head_hidden, seed),
      buffer_(static_cast<std::size_t>(options.buffer_capacity)) {
  if (options.method == Method::kPretrain) throw ConfigError("fine-tuning needs a DDPP or RTB method");
  if (options.batch < 1 || options.M < 1 || options.K < 1 || options.train_steps < 1 || options.refill_size < 1) {
    throw ConfigError("fine-tuning counts must be positive");
  }
  if (options.method == Method::kDdppKl && !reward.has_relaxed()) {
    throw ConfigError("ddpp-kl needs a reward with a relaxed (differentiable) form; '" + reward.describe() +
                      "' has none");
  }
  if (q_->architecture() != pre.architecture()) throw ConfigError("fine-tuned model must match the pretrained shape");
  if (options_.gamma <= 0.0) options_.gamma = 1.0 / options_.train_steps;
  if (options_.method == Method::kDdppSubtraj &&
      std::abs(1.0 / options_.gamma - std::round(1.0 / options_.gamma)) > 1e-6) {
    throw ConfigError("ddpp-subtraj needs gamma = 1 / integer");
  }
  q_opt_ = AdamState::for_params(q_->num_params(), options.lr_model);
  head_opt_ = AdamState::for_params(head_.num_params(), options.lr_head);
  scalar_opt_ = AdamState::for_params(1, options.lr_head);
}

void Finetuner::refill(Rng& rng) {
  const bool on_policy = steps_ % options_.on_policy_every == 0;
  const bool data = data_ && steps_ % options_.data_every == 0;
  if (on_policy) {
    const TimeGrid grid(options_.train_steps);
    double total = 0.0;
    for (int i = 0; i < options_.refill_size; ++i) {
      const Sequence x = ancestral_sample(*q_, grid, schedule_, rng);
      total += reward_.log_reward(x);
      buffer_.push(x);
    }
    last_on_policy_log_reward_ = total / options_.refill_size;
  }
  if (data) {
    for (int i = 0; i < options_.refill_size; ++i) buffer_.push(data_(rng));
  }
}

std::vector<TrainExample> Finetuner::draw_batch(Rng& rng) {
  const bool lattice = options_.method == Method::kDdppSubtraj;
  const int lattice_steps = std::max(1, static_cast<int>(std::lround(1.0 / options_.gamma)));
  std::uniform_int_distribution<int> pick_step(1, lattice_steps);
  std::vector<TrainExample> batch;
  for (Sequence& x0 : buffer_.sample(static_cast<std::size_t>(options_.batch), rng)) {
    const int k = lattice ? pick_step(rng) : 0;
    const double t = lattice ? (k == lattice_steps ? 1.0 : k * options_.gamma) : uniform01(rng);
    MaskedSample xt = mask_forward(q_->vocab(), schedule_, x0, t, rng);
    batch.push_back(TrainExample{std::move(x0), std::move(xt)});
  }
  return batch;
}

void Finetuner::apply_model_grad(std::vector<double>& grad) {
  clip_grad_norm(grad, options_.grad_clip);
  adam_step(q_->params(), grad, q_opt_);
}

StepMetrics Finetuner::step() {
  Rng rng = make_stream(seed_, "finetune", static_cast<std::uint64_t>(steps_));
  const bool warmup = steps_ < options_.warmup_steps;
  const bool off_policy = options_.method != Method::kDdppKl && options_.method != Method::kRtb;
  if (off_policy) refill(rng);
  StepMetrics m;
  switch (options_.method) {
    case Method::kDdppLb:
      m = step_lb(rng, warmup);
      break;
    case Method::kDdppIs:
      m = step_is(rng);
      break;
    case Method::kDdppSubtraj:
      m = step_subtraj(rng, warmup);
      break;
    case Method::kDdppKl:
      m = step_kl(rng);
      break;
    case Method::kRtb:
      m = step_rtb(rng);
      break;
    case Method::kPretrain:
      break;
  }
  m.step = steps_;
  ++steps_;
  return m;
}

StepMetrics Finetuner::step_lb(Rng& rng, bool warmup) {
  const auto batch = draw_batch(rng);
  StepMetrics m;
  const StepMetrics r =
      ddpp_lb_train_step(*q_, head_, pre_, reward_, batch, warmup, q_opt_, head_opt_, &m.calls, options_.grad_clip);
  const CallCounter calls = m.calls;
  m = r;
  m.calls = calls;
  return m;
}

StepMetrics Finetuner::step_is(Rng& rng) {
  const auto batch = draw_batch(rng);
  StepMetrics m;
  std::vector<double> grad(q_->num_params(), 0.0);
  int used = 0;
  for (const auto& ex : batch) {
    double log_z = 0.0;
    DenoiserOutput pre_mu;
    try {
      IsEstimate est = logz_is_detailed(pre_, *q_, ex.xt, options_.M, reward_, rng, &m.calls);
      log_z = est.log_z;
      pre_mu = std::move(est.pre_mu);
    } catch (const EstimatorDegenerate&) {
      CallCounter fallback;
      log_z = logz_mc(pre_, ex.xt, options_.M, reward_, rng, &fallback);
      pre_mu = pre_.predict_mean(ex.xt);
    }
    try {
      ResidualLossEval l = ddpp_single_step_loss(*q_, pre_mu, reward_, ex.x0, ex.xt, log_z, &m.calls);
      m.loss += l.value;
      m.mean_log_z += log_z;
      axpy(1.0, l.grad, grad);
      ++used;
    } catch (const InvalidSample&) {
      ++m.skipped;
    }
  }
  if (used == 0) return m;
  const double inv = 1.0 / used;
  m.loss *= inv;
  m.mean_log_z *= inv;
  for (double& g : grad) g *= inv;
  apply_model_grad(grad);
  return m;
}

StepMetrics Finetuner::step_subtraj(Rng& rng, bool warmup) {
  const auto batch = draw_batch(rng);
  StepMetrics m;
  m.warmup = warmup;
  std::vector<double> q_grad(q_->num_params(), 0.0);
  std::vector<double> head_grad(head_.num_params(), 0.0);
  std::vector<std::pair<double, LogZHead::Pass>> used;
  for (const auto& ex : batch) {
    LogZHead::Pass hp = head_.forward(ex.xt);
    try {
      ResidualLossEval l = ddpp_subtrajectory_loss(*q_, pre_, reward_, ex.x0, ex.xt, options_.gamma, hp.value,
                                                   schedule_, rng, options_.subtraj_inner_draws, &m.calls);
      m.loss += l.value;
      m.mean_log_z += hp.value;
      axpy(1.0, l.grad, q_grad);
      used.emplace_back(l.residual, std::move(hp));
    } catch (const InvalidSample&) {
      ++m.skipped;
    }
  }
  if (used.empty()) return m;
  const double inv = 1.0 / static_cast<double>(used.size());
  m.loss *= inv;
  m.mean_log_z *= inv;
  for (const auto& [r, hp] : used) head_.backward(hp, 2.0 * r * inv, head_grad);
  clip_grad_norm(head_grad, options_.grad_clip);
  adam_step(head_.params(), head_grad, head_opt_);
  if (!warmup) {
    for (double& g : q_grad) g *= inv;
    apply_model_grad(q_grad);
  }
  return m;
}

StepMetrics Finetuner::step_kl(Rng& rng) {
  const TimeGrid grid(options_.train_steps);
  StepMetrics m;
  std::vector<double> grad(q_->num_params(), 0.0);
  const double inv = 1.0 / options_.batch;
  for (int b = 0; b < options_.batch; ++b) {
    LossEval l = ddpp_kl_loss(*q_, pre_, reward_, options_.K, options_.estimator, schedule_, grid, rng, &m.calls,
                              options_.reinmax_tau);
    m.loss += inv * l.value;
    axpy(inv, l.grad, grad);
  }
  apply_model_grad(grad);
  return m;
}

StepMetrics Finetuner::step_rtb(Rng& rng) {
  const TimeGrid grid(options_.train_steps);
  StepMetrics m;
  std::vector<double> grad(q_->num_params(), 0.0);
  double dlog_z = 0.0;
  const double inv = 1.0 / options_.batch;
  for (int b = 0; b < options_.batch; ++b) {
    const Trajectory traj = simulate_trajectory(*q_, grid, schedule_, rng, nullptr, true);
    try {
      RtbLossEval l = rtb_loss(*q_, pre_, reward_, log_z_scalar_, traj, options_.detach_fraction, schedule_, rng,
                               &m.calls);
      m.loss += inv * l.value;
      dlog_z += inv * l.dlog_z;
      axpy(inv, l.grad, grad);
    } catch (const InvalidSample&) {
      ++m.skipped;
    }
  }
  m.mean_log_z = log_z_scalar_;
  apply_model_grad(grad);
  std::vector<double> scalar{log_z_scalar_};
  const std::vector<double> scalar_grad{dlog_z};
  adam_step(scalar, scalar_grad, scalar_opt_);
  log_z_scalar_ = scalar[0];
  return m;
}

}  // namespace mdmsteer
