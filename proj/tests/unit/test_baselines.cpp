#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "mdmsteer/baselines.hpp"
#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/oracle.hpp"
#include "mdmsteer/tasks.hpp"
#include "mdmsteer/trainer.hpp"

using namespace mdmsteer;

namespace {

// n = 1, d = 4: pretrained endpoint law [0.5, 0.3, 0.2] and R = [1, 2, 4].
struct ThreeEndpoints {
  Vocabulary vocab{4};
  std::unique_ptr<TabularDenoiser> pre = make_constant_tabular(vocab, 1, 4, {0.5, 0.3, 0.2});
  AdditiveReward reward{1, 3, {0.0, std::log(2.0), std::log(4.0)}};
};

DistTable empirical(const std::vector<Sequence>& xs) { return empirical_histogram(xs); }

}  // namespace

TEST(Trajectory, SimulatedTrajectoriesAreValid) {
  Vocabulary v(4);
  auto m = make_constant_tabular(v, 3, 4, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4});
  Rng rng = make_stream(1, "traj");
  for (int k = 0; k < 100; ++k) {
    const Trajectory traj = simulate_trajectory(*m, TimeGrid(5), NoiseSchedule::linear(), rng);
    EXPECT_EQ(traj.steps(), 5);
    EXPECT_NO_THROW(validate_trajectory(v, traj));
    for (std::size_t i = 0; i + 1 < traj.states.size(); ++i) {
      const auto& a = traj.states[i].seq;
      const auto& b = traj.states[i + 1].seq;
      for (int p = 0; p < 3; ++p) {
        if (!v.is_mask(a[p])) EXPECT_EQ(a[p], b[p]);
      }
    }
  }
  Trajectory broken = simulate_trajectory(*m, TimeGrid(2), NoiseSchedule::linear(), rng);
  broken.states.back().seq = Sequence{3, 0, 0};
  EXPECT_THROW(validate_trajectory(v, broken), InvalidSample);
}

TEST(BestOfN, OneIsAncestralSampling) {
  ThreeEndpoints inst;
  Rng a = make_stream(2, "bon");
  Rng b = make_stream(2, "bon");
  for (int k = 0; k < 50; ++k) {
    EXPECT_EQ(best_of_n(*inst.pre, inst.reward, 1, TimeGrid(4), NoiseSchedule::linear(), a),
              ancestral_sample(*inst.pre, TimeGrid(4), NoiseSchedule::linear(), b));
  }
  EXPECT_THROW(best_of_n(*inst.pre, inst.reward, 0, TimeGrid(4), NoiseSchedule::linear(), a), InvalidInput);
}

TEST(BestOfN, MatchesOrderStatistic) {
  // Best of N picks endpoint 2 unless all N avoid it:
  // P(best = 2) = 1 - 0.8^N, P(best = 1) = 0.8^N - 0.5^N, P(best = 0) = 0.5^N.
  ThreeEndpoints inst;
  Rng rng = make_stream(3, "bon");
  const int N = 10;
  const int draws = 20000;
  std::vector<Sequence> xs;
  CallCounter calls;
  for (int k = 0; k < draws; ++k) xs.push_back(best_of_n(*inst.pre, inst.reward, N, TimeGrid(4), NoiseSchedule::linear(), rng, &calls));
  const DistTable got = empirical(xs);
  const DistTable want({Sequence{0}, Sequence{1}, Sequence{2}},
                       {std::pow(0.5, N), std::pow(0.8, N) - std::pow(0.5, N), 1.0 - std::pow(0.8, N)});
  EXPECT_LE(tv_distance(got, want), 0.01);
  EXPECT_EQ(calls.pretrained, static_cast<std::int64_t>(draws) * N * 4);
  EXPECT_EQ(calls.reward, static_cast<std::int64_t>(draws) * N);
}

TEST(BestOfN, MeanRewardMonotoneInN) {
  ThreeEndpoints inst;
  double prev = -1e9;
  for (int N : {1, 2, 4, 8}) {
    Rng rng = make_stream(4, "bon", static_cast<std::uint64_t>(N));
    double mean = 0.0;
    for (int k = 0; k < 5000; ++k) {
      mean += inst.reward.log_reward(best_of_n(*inst.pre, inst.reward, N, TimeGrid(2), NoiseSchedule::linear(), rng)) / 5000;
    }
    EXPECT_GT(mean, prev);
    prev = mean;
  }
}

TEST(Particles, SingleParticleIsAncestralSampling) {
  Vocabulary v(4);
  auto m = make_constant_tabular(v, 3, 4, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4});
  AdditiveReward r(3, 3, {0, 1, 2, 0, 1, 2, 0, 1, 2});
  Rng a = make_stream(5, "pg");
  Rng b = make_stream(5, "pg");
  for (int k = 0; k < 50; ++k) {
    EXPECT_EQ(guided_particle_sample(*m, r, 1, TimeGrid(6), NoiseSchedule::linear(), a),
              ancestral_sample(*m, TimeGrid(6), NoiseSchedule::linear(), b));
  }
}

TEST(Particles, ConstantRewardKeepsPretrainedLaw) {
  Vocabulary v(3);
  auto m = make_constant_tabular(v, 2, 4, {0.7, 0.3, 0.2, 0.8});
  ConstantReward flat(0.0);
  const DistTable want = exact_endpoint_law(*m, TimeGrid(4), NoiseSchedule::linear());
  for (auto sel : {GuidanceSelection::kArgmax, GuidanceSelection::kSoftmax}) {
    Rng rng = make_stream(6, "pg");
    std::vector<Sequence> xs;
    for (int k = 0; k < 20000; ++k) {
      xs.push_back(guided_particle_sample(*m, flat, 5, TimeGrid(4), NoiseSchedule::linear(), rng, nullptr, sel));
    }
    EXPECT_LE(tv_distance(empirical(xs), want), 0.02);
  }
}

TEST(Particles, CallCountsPerStep) {
  ThreeEndpoints inst;
  Rng rng = make_stream(7, "pg");
  CallCounter total;
  std::vector<CallCounter> per_step;
  guided_particle_sample(*inst.pre, inst.reward, 7, TimeGrid(5), NoiseSchedule::linear(), rng, &total,
                         GuidanceSelection::kArgmax, &per_step);
  ASSERT_EQ(per_step.size(), 5u);
  for (const auto& s : per_step) {
    EXPECT_EQ(s.pretrained, 7);
    EXPECT_EQ(s.finetuned, 0);
  }
  EXPECT_EQ(total.pretrained, 1 + 5 * 7);
}

TEST(Particles, GuidanceRaisesReward) {
  ThreeEndpoints inst;
  Rng a = make_stream(8, "pg");
  Rng b = make_stream(8, "pg2");
  double plain = 0.0, guided = 0.0;
  for (int k = 0; k < 3000; ++k) {
    plain += inst.reward.log_reward(ancestral_sample(*inst.pre, TimeGrid(4), NoiseSchedule::linear(), a)) / 3000;
    guided += inst.reward.log_reward(guided_particle_sample(*inst.pre, inst.reward, 8, TimeGrid(4), NoiseSchedule::linear(), b)) / 3000;
  }
  EXPECT_GT(guided, plain + 0.1);
}

TEST(Rtb, ZeroAtIdentityWithConstantReward) {
  Vocabulary v(3);
  auto m = make_constant_tabular(v, 2, 4, {0.7, 0.3, 0.2, 0.8});
  ConstantReward flat(0.0);
  Rng rng = make_stream(9, "rtb");
  for (int k = 0; k < 20; ++k) {
    const Trajectory traj = simulate_trajectory(*m, TimeGrid(4), NoiseSchedule::linear(), rng);
    const RtbLossEval l = rtb_loss(*m, *m, flat, 0.0, traj, 0.3, NoiseSchedule::linear(), rng);
    EXPECT_NEAR(l.value, 0.0, 1e-24);
    for (double g : l.grad) EXPECT_NEAR(g, 0.0, 1e-12);
  }
}

TEST(Rtb, ScaleInvariance) {
  Vocabulary v(3);
  auto pre = make_constant_tabular(v, 2, 4, {0.7, 0.3, 0.2, 0.8});
  auto q = make_constant_tabular(v, 2, 4, {0.4, 0.6, 0.5, 0.5});
  AdditiveReward r(2, 2, {0.0, 0.5, -0.2, 0.1});
  AdditiveReward scaled(2, 2, {1.5, 2.0, -0.2, 0.1});
  Rng traj_rng = make_stream(10, "rtb");
  const Trajectory traj = simulate_trajectory(*q, TimeGrid(4), NoiseSchedule::linear(), traj_rng);
  Rng a = make_stream(11, "rtb");
  Rng b = make_stream(11, "rtb");
  const RtbLossEval x = rtb_loss(*q, *pre, r, 0.3, traj, 0.0, NoiseSchedule::linear(), a);
  const RtbLossEval y = rtb_loss(*q, *pre, scaled, 1.8, traj, 0.0, NoiseSchedule::linear(), b);
  EXPECT_NEAR(x.value, y.value, 1e-12);
  EXPECT_NEAR(x.dlog_z, 2.0 * x.residual, 1e-15);
}

TEST(Rtb, DetachedStepsDropOutOfGradient) {
  Vocabulary v(3);
  auto pre = make_constant_tabular(v, 1, 4, {0.7, 0.3});
  auto q = make_constant_tabular(v, 1, 4, {0.4, 0.6});
  AdditiveReward r(1, 2, {0.0, 1.0});
  Rng rng = make_stream(12, "rtb");
  const Trajectory traj = simulate_trajectory(*q, TimeGrid(4), NoiseSchedule::linear(), rng);
  const RtbLossEval full = rtb_loss(*q, *pre, r, 0.0, traj, 0.0, NoiseSchedule::linear(), rng);
  const RtbLossEval part = rtb_loss(*q, *pre, r, 0.0, traj, 0.5, NoiseSchedule::linear(), rng);
  EXPECT_EQ(full.value, part.value);
  EXPECT_THROW(rtb_loss(*q, *pre, r, 0.0, traj, 1.0, NoiseSchedule::linear(), rng), InvalidInput);
}

TEST(Rtb, ScalarLogZConverges) {
  // n = 1, d = 3, pretrained [0.7, 0.3], R = [1, 3]: log Z = log 1.6.
  Vocabulary v(3);
  auto pre = make_constant_tabular(v, 1, 4, {0.7, 0.3});
  AdditiveReward reward(1, 2, {0.0, std::log(3.0)});
  FinetuneOptions opt;
  opt.method = Method::kRtb;
  opt.batch = 16;
  opt.train_steps = 4;
  opt.lr_model = 1e-2;
  opt.lr_head = 1e-2;
  Finetuner ft(*pre, reward, NoiseSchedule::linear(), opt, [](Rng&) { return Sequence{0}; }, 13);
  for (int s = 0; s < 3000; ++s) ft.step();
  EXPECT_NEAR(ft.log_z_scalar(), std::log(1.6), 1e-2);
  const DistTable law = exact_endpoint_law(ft.model(), TimeGrid(4), NoiseSchedule::linear());
  const DistTable target = exact_target(mean_field_table(v, 1, {0.7, 0.3}), reward);
  EXPECT_LE(tv_distance(law, target), 0.02);
}
