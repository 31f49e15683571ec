#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"
#include "mdmsteer/objectives.hpp"
#include "mdmsteer/optim.hpp"
#include "mdmsteer/oracle.hpp"
#include "mdmsteer/reward.hpp"
#include "mdmsteer/tasks.hpp"

using namespace mdmsteer;

namespace {

void randomize(Denoiser& m, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_stream(seed, "randomize");
  std::normal_distribution<double> n(0.0, scale);
  for (double& p : m.params()) p += n(rng);
}

MaskedSample random_masked(const Vocabulary& v, int n, double t, Rng& rng) {
  std::uniform_int_distribution<int> tok(0, v.clean_size() - 1);
  Sequence x0(std::vector<Token>(static_cast<std::size_t>(n)));
  for (int i = 0; i < n; ++i) x0[i] = tok(rng);
  return mask_forward(v, NoiseSchedule::linear(), x0, t, rng);
}

void check_rows(const Vocabulary& v, const MaskedSample& xt, const DenoiserOutput& out) {
  ASSERT_EQ(static_cast<int>(out.probs.size()), out.length * out.classes);
  for (int i = 0; i < out.length; ++i) {
    double s = 0.0;
    for (int k = 0; k < out.classes; ++k) {
      EXPECT_GE(out.row(i)[k], 0.0);
      s += out.row(i)[k];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    if (!v.is_mask(xt.seq[i])) {
      for (int k = 0; k < out.classes; ++k) EXPECT_EQ(out.row(i)[k], k == xt.seq[i] ? 1.0 : 0.0);
    }
  }
}

}  // namespace

TEST(Denoiser, RowsAreDistributionsWithCopyThrough) {
  Vocabulary v(6);
  TabularDenoiser tab(v, 3, 4);
  MlpDenoiser mlp(v, 3, MlpShape{8, 16}, 3);
  randomize(tab, 1);
  Rng rng = make_stream(2, "rows");
  for (double t : {0.0, 0.3, 0.7, 1.0}) {
    for (int k = 0; k < 20; ++k) {
      const MaskedSample xt = random_masked(v, 3, t, rng);
      check_rows(v, xt, tab.predict_mean(xt));
      check_rows(v, xt, mlp.predict_mean(xt));
    }
  }
}

TEST(Denoiser, FullyUnmaskedIsOneHot) {
  Vocabulary v(4);
  MlpDenoiser mlp(v, 2, MlpShape{4, 8}, 1);
  const MaskedSample xt{Sequence{2, 0}, 0.4};
  const auto out = mlp.predict_mean(xt);
  EXPECT_EQ(out.row(0)[2], 1.0);
  EXPECT_EQ(out.row(1)[0], 1.0);
}

TEST(Denoiser, ZeroLogitTabularIsUniform) {
  Vocabulary v(5);
  TabularDenoiser tab(v, 2, 3);
  const auto out = tab.predict_mean({Sequence{4, 1}, 0.5});
  for (int k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(out.row(0)[k], 0.25);
}

TEST(Denoiser, RejectsMismatchedInput) {
  Vocabulary v(5);
  TabularDenoiser tab(v, 2, 3);
  EXPECT_THROW(tab.predict_mean({Sequence{4, 1, 1}, 0.5}), InvalidInput);
  EXPECT_THROW(tab.predict_mean({Sequence{5, 1}, 0.5}), InvalidInput);
}

TEST(Denoiser, ArchitectureRoundTrip) {
  Vocabulary v(7);
  MlpDenoiser mlp(v, 3, MlpShape{5, 9}, 11);
  TabularDenoiser tab(v, 2, 6);
  EXPECT_EQ(make_denoiser(mlp.architecture())->num_params(), mlp.num_params());
  EXPECT_EQ(make_denoiser(tab.architecture())->architecture(), tab.architecture());
}

TEST(Denoiser, TabularLearnsPointMass) {
  Vocabulary v(4);
  TabularDenoiser tab(v, 2, 4);
  AdamState opt = AdamState::for_params(tab.num_params(), 0.2);
  const Sequence data{2, 1};
  Rng rng = make_stream(3, "pm");
  for (int step = 0; step < 5000; ++step) {
    LossEval l = elbo_loss(tab, data, NoiseSchedule::linear(), rng);
    adam_step(tab.params(), l.grad, opt);
  }
  for (const auto& seq : {Sequence{3, 3}, Sequence{3, 1}, Sequence{2, 3}}) {
    for (double t : {0.2, 0.6, 0.95}) {
      const auto out = tab.predict_mean({seq, t});
      for (int i = 0; i < 2; ++i) {
        if (v.is_mask(seq[i])) EXPECT_NEAR(out.row(i)[data[i]], 1.0, 1e-3);
      }
    }
  }
}

TEST(ReverseTransition, StayAndUnmaskMass) {
  Vocabulary v(4);
  TabularDenoiser tab(v, 2, 1);
  auto schedule = NoiseSchedule::linear();
  // alpha_t = 0.4, alpha_s = 0.6
  const MaskedSample xt{Sequence{3, 1}, 0.6};
  const auto mu = tab.predict_mean(xt);
  const auto dist = reverse_transition_dist(v, mu, xt, 0.4, schedule);
  EXPECT_NEAR(dist[3], 2.0 / 3.0, 1e-12);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(dist[static_cast<std::size_t>(k)], 1.0 / 9.0, 1e-12);
  EXPECT_EQ(dist[4 + 1], 1.0);
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int k = 0; k < 4; ++k) s += dist[static_cast<std::size_t>(i * 4 + k)];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(reverse_transition_dist(v, mu, xt, 0.6, schedule), DomainError);
  const auto tiny_step = reverse_transition_dist(v, mu, xt, 0.6 - 1e-15, schedule);
  EXPECT_NEAR(tiny_step[3], 1.0, 1e-12);
}

TEST(EndpointLogprob, Examples) {
  Vocabulary v(5);
  TabularDenoiser tab(v, 2, 1);
  const MaskedSample clean{Sequence{1, 2}, 0.3};
  const auto mu_clean = tab.predict_mean(clean);
  EXPECT_EQ(endpoint_logprob(v, mu_clean, clean, Sequence{1, 2}), 0.0);
  const MaskedSample one{Sequence{4, 2}, 0.3};
  const auto mu = tab.predict_mean(one);
  EXPECT_NEAR(endpoint_logprob(v, mu, one, Sequence{3, 2}), std::log(0.25), 1e-12);
  EXPECT_TRUE(is_neg_inf(endpoint_logprob(v, mu, one, Sequence{3, 1})));
  EXPECT_THROW(endpoint_logprob(v, mu, one, Sequence{3, 1, 1}), InvalidInput);
}

TEST(AncestralSample, SingleStepLaw) {
  Vocabulary v(4);
  auto tab = make_constant_tabular(v, 1, 2, {0.5, 0.3, 0.2});
  Rng rng = make_stream(4, "anc");
  std::vector<Sequence> xs;
  for (int k = 0; k < 100000; ++k) xs.push_back(ancestral_sample(*tab, TimeGrid(1), NoiseSchedule::linear(), rng));
  const DistTable expect({Sequence{0}, Sequence{1}, Sequence{2}}, {0.5, 0.3, 0.2});
  EXPECT_LE(tv_distance(empirical_histogram(xs), expect), 0.02);
}

TEST(AncestralSample, TwoStepLawMatchesEnumeration) {
  Vocabulary v(4);
  TabularDenoiser tab(v, 1, 2);
  randomize(tab, 5);
  auto schedule = NoiseSchedule::linear();
  const TimeGrid grid(2);
  Rng rng = make_stream(6, "anc");
  std::vector<Sequence> xs;
  for (int k = 0; k < 100000; ++k) xs.push_back(ancestral_sample(tab, grid, schedule, rng));
  EXPECT_LE(tv_distance(empirical_histogram(xs), exact_endpoint_law(tab, grid, schedule)), 0.02);
}

TEST(AncestralSample, CleanOutputAndOneCallPerStep) {
  Vocabulary v(6);
  MlpDenoiser mlp(v, 4, MlpShape{4, 8}, 2);
  Rng rng = make_stream(7, "anc");
  for (int T : {1, 3, 16}) {
    CallCounter c;
    const Sequence x = ancestral_sample(mlp, TimeGrid(T), NoiseSchedule::log_linear(), rng, &c, true);
    EXPECT_TRUE(x.is_clean(v));
    EXPECT_EQ(c.finetuned, T);
    EXPECT_EQ(c.pretrained, 0);
  }
}

TEST(SampleTransition, NeverRemasksOrMutates) {
  Vocabulary v(5);
  TabularDenoiser tab(v, 3, 4);
  randomize(tab, 8);
  auto schedule = NoiseSchedule::linear();
  Rng rng = make_stream(9, "tr");
  for (int trial = 0; trial < 200; ++trial) {
    MaskedSample x{Sequence::all_masked(v, 3), 1.0};
    const TimeGrid grid(6);
    for (int i = grid.steps(); i >= 1; --i) {
      const auto mu = tab.predict_mean(x);
      const MaskedSample next = sample_transition(v, mu, x, grid.time(i - 1), schedule, i == 1, rng);
      for (int p = 0; p < 3; ++p) {
        if (!v.is_mask(x.seq[p])) EXPECT_EQ(next.seq[p], x.seq[p]);
      }
      EXPECT_FALSE(is_neg_inf(transition_logprob(v, mu, x, next, schedule, i == 1)));
      x = next;
    }
    EXPECT_TRUE(x.seq.is_clean(v));
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{1.0, -2.0};
  AdamState s = AdamState::for_params(2, 0.1);
  adam_step(p, std::vector<double>{0.0, 0.0}, s);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, ScalarTrace) {
  // Hand-unrolled recurrence for a scalar.
  std::vector<double> p{0.0};
  AdamState s = AdamState::for_params(1, 0.01);
  const double g1 = 0.5, g2 = -0.2;
  adam_step(p, std::vector<double>{g1}, s);
  double m = 0.1 * g1, vv = 0.001 * g1 * g1;
  double expect = -0.01 * (m / 0.1) / (std::sqrt(vv / 0.001) + 1e-8);
  EXPECT_NEAR(p[0], expect, 1e-15);
  adam_step(p, std::vector<double>{g2}, s);
  m = 0.9 * m + 0.1 * g2;
  vv = 0.999 * vv + 0.001 * g2 * g2;
  expect += -0.01 * (m / (1 - 0.81)) / (std::sqrt(vv / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p[0], expect, 1e-15);
  EXPECT_EQ(s.step, 2);
}

TEST(Adam, NonFiniteGradientThrows) {
  std::vector<double> p{1.0};
  AdamState s = AdamState::for_params(1, 0.1);
  EXPECT_THROW(adam_step(p, std::vector<double>{std::nan("")}, s), TrainingError);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(s.step, 0);
}

TEST(Ema, DecayCases) {
  std::vector<double> params{2.0};
  EmaState zero = EmaState::for_params(std::vector<double>{0.0}, 0.0);
  ema_update(zero, params);
  EXPECT_EQ(zero.shadow[0], 2.0);
  EmaState one = EmaState::for_params(std::vector<double>{0.0}, 1.0);
  ema_update(one, params);
  EXPECT_EQ(one.shadow[0], 0.0);
  EmaState half = EmaState::for_params(std::vector<double>{0.0}, 0.5);
  ema_update(half, params);
  EXPECT_EQ(half.shadow[0], 1.0);
}

TEST(GradCheck, QuadraticIsExact) {
  std::vector<double> p{0.3, -1.2, 2.0};
  auto loss = [&] {
    LossEval l;
    l.grad.resize(3);
    for (std::size_t i = 0; i < 3; ++i) {
      l.value += (i + 1.0) * p[i] * p[i];
      l.grad[i] = 2.0 * (i + 1.0) * p[i];
    }
    return l;
  };
  EXPECT_LE(grad_check(p, loss).max_rel_error, 1e-8);
}

TEST(GradCheck, ElboOnTabular) {
  Vocabulary v(4);
  TabularDenoiser tab(v, 2, 3);
  randomize(tab, 10);
  const Sequence x0{0, 2};
  const MaskedSample xt{Sequence{3, 3}, 0.55};
  auto r = grad_check(tab.params(), [&] { return elbo_loss_at(tab, x0, xt, NoiseSchedule::linear()); });
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ElboAndDdppOnMlp) {
  Vocabulary v(5);
  MlpDenoiser q(v, 3, MlpShape{4, 6}, 1);
  MlpDenoiser pre(v, 3, MlpShape{4, 6}, 2);
  randomize(q, 11, 0.3);
  AdditiveReward reward(3, 4, {0.1, -0.2, 0.3, 0.0, 0.5, 0.1, -0.4, 0.2, 0.0, 0.3, 0.2, -0.1});
  const Sequence x0{1, 3, 0};
  const MaskedSample xt{Sequence{4, 3, 4}, 0.7};
  auto elbo = grad_check(q.params(), [&] { return elbo_loss_at(q, x0, xt, NoiseSchedule::log_linear()); });
  EXPECT_LE(elbo.max_rel_error, 1e-4);
  auto ddpp = grad_check(q.params(), [&] {
    auto l = ddpp_single_step_loss(q, pre, reward, x0, xt, 0.2);
    return LossEval{l.value, l.grad};
  });
  EXPECT_LE(ddpp.max_rel_error, 1e-4);
}
