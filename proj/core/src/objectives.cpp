#include "mdmsteer/objectives.hpp"

#include <cmath>
#include <random>

#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

namespace {

constexpr int kMaxTimeRetries = 100;

std::size_t cells(const Denoiser& model) {
  return static_cast<std::size_t>(model.length()) * static_cast<std::size_t>(model.classes());
}

void check_consistent(const Vocabulary& vocab, const Sequence& x0, const MaskedSample& xt) {
  if (x0.size() != xt.seq.size()) throw InvalidInput("x0 and xt lengths differ");
  if (!x0.is_clean(vocab)) throw InvalidInput("x0 must be clean");
  for (int i = 0; i < x0.size(); ++i) {
    if (!vocab.is_mask(xt.seq[i]) && xt.seq[i] != x0[i]) {
      throw InvalidInput("xt disagrees with x0 at position " + std::to_string(i));
    }
  }
}

// dlogits += w * (onehot(x0_i) - mu_i) at every masked position: the
// gradient of w * log q(x0|xt) in q's logits.
void add_endpoint_dlogits(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& xt,
                          const Sequence& x0, double w, std::span<double> dlogits) {
  const std::size_t k = static_cast<std::size_t>(mu.classes);
  for (int i = 0; i < x0.size(); ++i) {
    if (!vocab.is_mask(xt.seq[i])) continue;
    const auto m = mu.row(i);
    double* dz = dlogits.data() + static_cast<std::size_t>(i) * k;
    for (std::size_t v = 0; v < k; ++v) dz[v] -= w * m[v];
    dz[static_cast<std::size_t>(x0[i])] += w;
  }
}

double draw_time(const NoiseSchedule& schedule, Rng& rng, double lo = 0.0) {
  for (int attempt = 0; attempt < kMaxTimeRetries; ++attempt) {
    const double t = lo + (1.0 - lo) * uniform01(rng);
    if (1.0 - schedule.alpha(t) > 0.0) return t;
  }
  throw TrainingError("could not draw a time with 1 - alpha(t) > 0");
}

LossEval kl_surrogate_from_passes(const Denoiser& q, const ForwardPass& qpass, const DenoiserOutput& pre_mu,
                                  const RewardModel& reward, const KlDraws& draws, GradEstimatorKind estimator,
                                  double tau) {
  const Vocabulary& vocab = q.vocab();
  const int n = q.length();
  const std::size_t k = static_cast<std::size_t>(q.classes());
  const MaskedSample& xt = draws.xt;
  const auto& mu = qpass.out;
  if (draws.endpoints.empty()) throw InvalidInput("reverse-KL surrogate needs at least one endpoint draw");
  if (draws.ref_log_probs.size() != cells(q)) throw InvalidInput("reverse-KL reference logits have wrong size");

  // a_i = log mu_q,i - log mu_pre,i at masked positions
  std::vector<double> a(cells(q), 0.0);
  for (int i = 0; i < n; ++i) {
    if (!vocab.is_mask(xt.seq[i])) continue;
    const auto lq = mu.log_row(i);
    const auto lp = pre_mu.log_row(i);
    for (std::size_t v = 0; v < k; ++v) a[static_cast<std::size_t>(i) * k + v] = lq[v] - lp[v];
  }

  const double inv_k = 1.0 / static_cast<double>(draws.endpoints.size());
  LossEval out;
  out.grad.assign(q.num_params(), 0.0);
  std::vector<double> dlogits(cells(q), 0.0);
  std::vector<double> rows(cells(q));
  std::vector<double> reward_grad(cells(q));
  std::vector<double> g(k);

  for (const Sequence& x : draws.endpoints) {
    check_consistent(vocab, x, xt);
    std::vector<RelaxedDraw> relaxed;
    relaxed.reserve(static_cast<std::size_t>(n));
    std::fill(rows.begin(), rows.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      double* row = rows.data() + static_cast<std::size_t>(i) * k;
      if (!vocab.is_mask(xt.seq[i])) {
        row[static_cast<std::size_t>(x[i])] = 1.0;
        relaxed.emplace_back(GradEstimatorKind::kStraightThrough, std::span<const double>(mu.log_row(i)), x[i]);
        continue;
      }
      std::span<const double> ref(draws.ref_log_probs.data() + static_cast<std::size_t>(i) * k, k);
      relaxed.emplace_back(estimator, ref, x[i], tau);
      relaxed.back().value(mu.log_row(i), std::span<double>(row, k));
    }
    double value = -reward.relaxed_log_reward(rows, n, static_cast<int>(k), reward_grad);
    for (int i = 0; i < n; ++i) {
      if (!vocab.is_mask(xt.seq[i])) continue;
      const std::size_t off = static_cast<std::size_t>(i) * k;
      double row_sum = 0.0;
      for (std::size_t v = 0; v < k; ++v) {
        value += rows[off + v] * a[off + v];
        g[v] = a[off + v] - reward_grad[off + v];
        row_sum += rows[off + v];
      }
      std::span<double> dz(dlogits.data() + off, k);
      // through log mu_q inside <row, a>
      const auto m = mu.row(i);
      for (std::size_t v = 0; v < k; ++v) dz[v] += inv_k * (rows[off + v] - m[v] * row_sum);
      // through the relaxed row
      for (std::size_t v = 0; v < k; ++v) g[v] *= inv_k;
      relaxed[static_cast<std::size_t>(i)].backward(mu.log_row(i), g, dz);
    }
    out.value += inv_k * value;
  }
  for (double v : dlogits) {
    if (!std::isfinite(v)) throw TrainingError("gradient estimator produced a non-finite surrogate gradient");
  }
  q.backward(qpass, dlogits, out.grad);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- ELBO

LossEval elbo_loss_at(const Denoiser& model, const Sequence& x0, const MaskedSample& xt,
                      const NoiseSchedule& schedule, bool want_grad) {
  const Vocabulary& vocab = model.vocab();
  check_consistent(vocab, x0, xt);
  LossEval out;
  if (want_grad) out.grad.assign(model.num_params(), 0.0);
  if (xt.seq.mask_count(vocab) == 0) return out;
  const double w = schedule.elbo_weight(xt.t);
  const ForwardPass pass = model.forward(xt);
  double nll = 0.0;
  for (int i = 0; i < x0.size(); ++i) {
    if (vocab.is_mask(xt.seq[i])) nll -= pass.out.log_row(i)[static_cast<std::size_t>(x0[i])];
  }
  out.value = w * nll;
  if (want_grad) {
    std::vector<double> dlogits(cells(model), 0.0);
    add_endpoint_dlogits(vocab, pass.out, xt, x0, -w, dlogits);
    model.backward(pass, dlogits, out.grad);
  }
  return out;
}

LossEval elbo_loss(const Denoiser& model, const Sequence& x0, const NoiseSchedule& schedule, Rng& rng,
                   bool want_grad) {
  const double t = draw_time(schedule, rng);
  const MaskedSample xt = mask_forward(model.vocab(), schedule, x0, t, rng);
  return elbo_loss_at(model, x0, xt, schedule, want_grad);
}

// ---------------------------------------------------------------- log Z estimators

double logz_mc(const Denoiser& pre, const MaskedSample& xt, int M, const RewardModel& reward, Rng& rng,
               CallCounter* counter) {
  if (M < 1) throw InvalidInput("logz_mc needs M >= 1");
  const DenoiserOutput mu = pre.predict_mean(xt);
  count_model(counter, false);
  std::vector<double> logs(static_cast<std::size_t>(M));
  for (auto& l : logs) {
    l = reward.log_reward(sample_endpoint(pre.vocab(), mu, xt, rng));
    count_reward(counter);
  }
  return logsumexp(logs) - std::log(static_cast<double>(M));
}

IsEstimate logz_is_detailed(const Denoiser& pre, const Denoiser& proposal, const MaskedSample& xt, int M,
                            const RewardModel& reward, Rng& rng, CallCounter* counter) {
  if (M < 1) throw InvalidInput("logz_is needs M >= 1");
  const Vocabulary& vocab = pre.vocab();
  const DenoiserOutput qmu = proposal.predict_mean(xt);
  count_model(counter, true);
  IsEstimate est;
  est.draws.reserve(static_cast<std::size_t>(M));
  est.log_weights.reserve(static_cast<std::size_t>(M));
  bool any_finite = false;
  for (int j = 0; j < M; ++j) {
    Sequence x = sample_endpoint(vocab, qmu, xt, rng);
    est.pre_mu = pre.predict_mean(xt);
    count_model(counter, false);
    const double lp = endpoint_logprob(vocab, est.pre_mu, xt, x);
    const double lq = endpoint_logprob(vocab, qmu, xt, x);
    const double lr = reward.log_reward(x);
    count_reward(counter);
    double w = kNegInf;
    if (!is_neg_inf(lp) && !is_neg_inf(lq)) {
      w = lp + lr - lq;
      any_finite = true;
    }
    est.log_weights.push_back(w);
    est.draws.push_back(std::move(x));
  }
  if (!any_finite) throw EstimatorDegenerate("all importance weights are -inf");
  std::vector<double> finite;
  for (double w : est.log_weights) {
    if (!is_neg_inf(w)) finite.push_back(w);
  }
  est.log_z = logsumexp(finite) - std::log(static_cast<double>(M));
  return est;
}

double logz_is(const Denoiser& pre, const Denoiser& proposal, const MaskedSample& xt, int M,
               const RewardModel& reward, Rng& rng, CallCounter* counter) {
  return logz_is_detailed(pre, proposal, xt, M, reward, rng, counter).log_z;
}

double batch_optimal_logz(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                           const MaskedSample& xt, std::span<const Sequence> endpoints) {
  if (endpoints.empty()) throw InvalidInput("batch_optimal_logz needs at least one endpoint");
  const Vocabulary& vocab = q.vocab();
  const DenoiserOutput qmu = q.predict_mean(xt);
  const DenoiserOutput pmu = pre.predict_mean(xt);
  double total = 0.0;
  for (const Sequence& x : endpoints) {
    const double lq = endpoint_logprob(vocab, qmu, xt, x);
    const double lp = endpoint_logprob(vocab, pmu, xt, x);
    if (is_neg_inf(lq) || is_neg_inf(lp)) throw InvalidSample("endpoint has zero probability: " + x.to_string());
    total += lp + reward.log_reward(x) - lq;
  }
  return total / static_cast<double>(endpoints.size());
}

// ---------------------------------------------------------------- DDPP losses

ResidualLossEval ddpp_single_step_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                                       const Sequence& x0, const MaskedSample& xt, double log_z,
                                       CallCounter* counter) {
  check_consistent(q.vocab(), x0, xt);
  const DenoiserOutput pmu = pre.predict_mean(xt);
  count_model(counter, false);
  return ddpp_single_step_loss(q, pmu, reward, x0, xt, log_z, counter);
}

ResidualLossEval ddpp_single_step_loss(const Denoiser& q, const DenoiserOutput& pre_mu, const RewardModel& reward,
                                       const Sequence& x0, const MaskedSample& xt, double log_z,
                                       CallCounter* counter) {
  const Vocabulary& vocab = q.vocab();
  check_consistent(vocab, x0, xt);
  const ForwardPass qpass = q.forward(xt);
  count_model(counter, true);
  const double lq = endpoint_logprob(vocab, qpass.out, xt, x0);
  const double lp = endpoint_logprob(vocab, pre_mu, xt, x0);
  if (is_neg_inf(lq) || is_neg_inf(lp)) throw InvalidSample("endpoint has zero probability: " + x0.to_string());
  const double lr = reward.log_reward(x0);
  count_reward(counter);

  ResidualLossEval out;
  out.residual = lq - lp - lr + log_z;
  out.value = out.residual * out.residual;
  out.grad.assign(q.num_params(), 0.0);
  std::vector<double> dlogits(cells(q), 0.0);
  add_endpoint_dlogits(vocab, qpass.out, xt, x0, 2.0 * out.residual, dlogits);
  q.backward(qpass, dlogits, out.grad);
  return out;
}

LossEval ddpp_kl_surrogate(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                           const KlDraws& draws, GradEstimatorKind estimator, double tau, CallCounter* counter) {
  const ForwardPass qpass = q.forward(draws.xt);
  count_model(counter, true);
  const DenoiserOutput pmu = pre.predict_mean(draws.xt);
  count_model(counter, false);
  return kl_surrogate_from_passes(q, qpass, pmu, reward, draws, estimator, tau);
}

LossEval ddpp_kl_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward, int K,
                      GradEstimatorKind estimator, const NoiseSchedule& schedule, const TimeGrid& grid, Rng& rng,
                      CallCounter* counter, double tau, KlDraws* draws_out) {
  if (K < 1) throw InvalidInput("ddpp_kl_loss needs K >= 1");
  if (!reward.has_relaxed()) throw ConfigError("reverse-KL objective needs a reward with a relaxed form");
  const Vocabulary& vocab = q.vocab();
  const Sequence x0 = ancestral_sample(q, grid, schedule, rng, counter, true);
  const double t = draw_time(schedule, rng);

  KlDraws draws;
  draws.xt = mask_forward(vocab, schedule, x0, t, rng);
  const ForwardPass qpass = q.forward(draws.xt);
  count_model(counter, true);
  const DenoiserOutput pmu = pre.predict_mean(draws.xt);
  count_model(counter, false);
  draws.ref_log_probs = qpass.out.log_probs;
  for (int k = 0; k < K; ++k) draws.endpoints.push_back(sample_endpoint(vocab, qpass.out, draws.xt, rng));
  for (int k = 0; k < K; ++k) count_reward(counter);

  LossEval out = kl_surrogate_from_passes(q, qpass, pmu, reward, draws, estimator, tau);
  if (draws_out) *draws_out = std::move(draws);
  return out;
}

ResidualLossEval ddpp_subtrajectory_loss(const Denoiser& q, const Denoiser& pre, const RewardModel& reward,
                                         const Sequence& x0, const MaskedSample& xt, double gamma, double log_z,
                                         const NoiseSchedule& schedule, Rng& rng, int inner_draws,
                                         CallCounter* counter) {
  const Vocabulary& vocab = q.vocab();
  check_consistent(vocab, x0, xt);
  if (!(gamma > 0.0) || gamma > xt.t + 1e-12) throw DomainError("sub-trajectory loss needs 0 < gamma <= t");
  const double steps = std::round(xt.t / gamma);
  if (std::abs(xt.t / gamma - steps) > 1e-6) throw DomainError("sub-trajectory loss needs t on the gamma lattice");
  if (inner_draws < 0) throw InvalidInput("sub-trajectory loss needs inner_draws >= 0");

  const int k = static_cast<int>(steps);
  const bool full_path = inner_draws == 0;
  const int draws = full_path ? k : inner_draws;
  std::uniform_int_distribution<int> pick_step(1, k);
  // A full path sums every step; random steps average and rescale by k.
  const double scale = full_path ? 1.0 : steps;
  const double inv_j = full_path ? 1.0 : 1.0 / static_cast<double>(inner_draws);
  std::vector<ForwardPass> passes;
  std::vector<MaskedSample> targets;
  passes.reserve(static_cast<std::size_t>(draws));
  targets.reserve(static_cast<std::size_t>(draws));
  double mean_log_ratio = 0.0;
  MaskedSample path = xt;
  for (int draw = 0; draw < draws; ++draw) {
    const int j = full_path ? k - draw : pick_step(rng);
    const double s = j == k ? xt.t : j * gamma;
    const MaskedSample xs = full_path ? path : bridge_sample(vocab, schedule, x0, xt, s, rng);
    const MaskedSample xprev = bridge_sample(vocab, schedule, x0, xs, j == 1 ? 0.0 : (j - 1) * gamma, rng);
    if (full_path) path = xprev;
    ForwardPass qpass = q.forward(xs);
    count_model(counter, true);
    const DenoiserOutput pmu = pre.predict_mean(xs);
    count_model(counter, false);
    const double lq = transition_logprob(vocab, qpass.out, xs, xprev, schedule, false);
    const double lp = transition_logprob(vocab, pmu, xs, xprev, schedule, false);
    if (is_neg_inf(lq) || is_neg_inf(lp)) throw InvalidSample("transition has zero probability");
    mean_log_ratio += inv_j * (lq - lp);
    passes.push_back(std::move(qpass));
    targets.push_back(xprev);
  }
  const double lr = reward.log_reward(x0);
  count_reward(counter);

  ResidualLossEval out;
  out.residual = scale * mean_log_ratio + log_z - lr;
  out.value = out.residual * out.residual;
  out.grad.assign(q.num_params(), 0.0);
  std::vector<double> dlogits(cells(q));
  for (std::size_t j = 0; j < passes.size(); ++j) {
    std::fill(dlogits.begin(), dlogits.end(), 0.0);
    transition_logprob_dlogits(vocab, passes[j].out, passes[j].input, targets[j], 2.0 * out.residual * scale * inv_j,
                               dlogits);
    q.backward(passes[j], dlogits, out.grad);
  }
  return out;
}

}  // namespace mdmsteer
