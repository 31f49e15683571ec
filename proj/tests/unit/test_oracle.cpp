#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/oracle.hpp"
#include "mdmsteer/tasks.hpp"

using namespace mdmsteer;

namespace {

void perturb(Denoiser& m, std::uint64_t seed, double scale) {
  Rng rng = make_stream(seed, "perturb");
  std::normal_distribution<double> n(0.0, scale);
  for (double& p : m.params()) p += n(rng);
}

}  // namespace

TEST(Enumerate, LexicographicAndSized) {
  const auto all = enumerate_sequences(4, 2);
  ASSERT_EQ(all.size(), 9u);
  EXPECT_EQ(all.front(), (Sequence{0, 0}));
  EXPECT_EQ(all[1], (Sequence{0, 1}));
  EXPECT_EQ(all.back(), (Sequence{2, 2}));
  EXPECT_THROW(enumerate_sequences(11, 7), SizeError);
}

TEST(ExactLikelihood, SumsToOne) {
  Vocabulary v(3);
  for (int n : {1, 2, 3}) {
    TabularDenoiser tab(v, n, 4);
    perturb(tab, static_cast<std::uint64_t>(n), 1.0);
    for (int T : {1, 3, 8}) {
      double total = 0.0;
      for (const auto& x : enumerate_sequences(3, n)) {
        total += std::exp(exact_mdm_likelihood(tab, x, TimeGrid(T), NoiseSchedule::linear()));
      }
      EXPECT_NEAR(total, 1.0, 1e-12) << "n=" << n << " T=" << T;
    }
  }
}

TEST(ExactLikelihood, ConstantModelIsMeanField) {
  Vocabulary v(4);
  const std::vector<double> probs{0.5, 0.3, 0.2, 0.1, 0.6, 0.3};
  auto m = make_constant_tabular(v, 2, 4, probs);
  const DistTable mf = mean_field_table(v, 2, probs);
  const DistTable law = exact_endpoint_law(*m, TimeGrid(5), NoiseSchedule::log_linear());
  EXPECT_NEAR(tv_distance(mf, law), 0.0, 1e-12);
  EXPECT_NEAR(law.prob(Sequence{0, 1}), 0.3, 1e-12);
}

TEST(ExactLikelihood, MatchesAncestralFrequencies) {
  Vocabulary v(3);
  TabularDenoiser tab(v, 2, 4);
  perturb(tab, 9, 1.5);
  const TimeGrid grid(3);
  const DistTable law = exact_endpoint_law(tab, grid, NoiseSchedule::linear());
  Rng rng = make_stream(10, "anc");
  std::vector<Sequence> xs;
  for (int k = 0; k < 40000; ++k) xs.push_back(ancestral_sample(tab, grid, NoiseSchedule::linear(), rng));
  EXPECT_LE(tv_distance(empirical_histogram(xs), law), 0.015);
}

TEST(ExactTarget, ProductWithReward) {
  Vocabulary v(4);
  const DistTable pre = mean_field_table(v, 1, {0.5, 0.3, 0.2});
  AdditiveReward r(1, 3, {0.0, std::log(2.0), std::log(4.0)});
  const DistTable t = exact_target(pre, r);
  EXPECT_NEAR(t.prob(Sequence{0}), 0.5 / 1.9, 1e-12);
  EXPECT_NEAR(t.prob(Sequence{1}), 0.6 / 1.9, 1e-12);
  EXPECT_NEAR(t.prob(Sequence{2}), 0.8 / 1.9, 1e-12);

  ConstantReward flat(-2.0);
  EXPECT_NEAR(tv_distance(exact_target(pre, flat), pre), 0.0, 1e-12);
}

TEST(ExactPosterior, RestrictsToConsistentEndpoints) {
  Vocabulary v(3);
  auto pre = make_constant_tabular(v, 2, 4, {0.7, 0.3, 0.4, 0.6});
  AdditiveReward r(2, 2, {0.0, 1.0, 0.0, 0.0});
  const auto post = exact_denoising_posterior(*pre, {Sequence{2, 1}, 0.5}, r);
  EXPECT_EQ(post.posterior.size(), 2u);
  const double z = 0.7 + 0.3 * std::exp(1.0);
  EXPECT_NEAR(post.log_z, std::log(z), 1e-12);
  EXPECT_NEAR(post.posterior.prob(Sequence{1, 1}), 0.3 * std::exp(1.0) / z, 1e-12);
  EXPECT_EQ(post.posterior.prob(Sequence{1, 0}), 0.0);

  const auto clean = exact_denoising_posterior(*pre, {Sequence{1, 0}, 0.0}, r);
  EXPECT_NEAR(clean.log_z, 1.0, 1e-12);
}

TEST(Distances, TvAndKlExamples) {
  const DistTable p({Sequence{0}, Sequence{1}}, {0.5, 0.5});
  const DistTable q({Sequence{0}, Sequence{1}}, {0.9, 0.1});
  const DistTable r({Sequence{1}, Sequence{2}}, {0.5, 0.5});
  EXPECT_NEAR(tv_distance(p, q), 0.4, 1e-12);
  EXPECT_NEAR(tv_distance(p, r), 0.5, 1e-12);
  EXPECT_NEAR(tv_distance(p, p), 0.0, 1e-15);
  EXPECT_NEAR(kl_divergence(p, q), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-12);
  EXPECT_NEAR(kl_divergence(q, q), 0.0, 1e-15);
  EXPECT_THROW(kl_divergence(p, r), DomainError);
}

TEST(DistTable, ValidatesInput) {
  EXPECT_THROW(DistTable({Sequence{0}, Sequence{0}}, {0.5, 0.5}), InvalidInput);
  EXPECT_THROW(DistTable({Sequence{0}, Sequence{1}}, {0.5, 0.6}), InvalidInput);
  EXPECT_THROW(DistTable({Sequence{0}, Sequence{1}}, {1.5, -0.5}), InvalidInput);
  EXPECT_THROW(DistTable::from_weights({Sequence{0}}, {0.0}), DegenerateTarget);
  const DistTable t = DistTable::from_weights({Sequence{1}, Sequence{0}}, {3.0, 1.0});
  EXPECT_EQ(t.support().front(), Sequence{0});
  EXPECT_NEAR(t.prob(Sequence{1}), 0.75, 1e-15);
}

TEST(DistTable, CsvRoundTrip) {
  const DistTable t({Sequence{0, 2}, Sequence{1, 1}, Sequence{3, 0}}, {0.125, 0.375, 0.5});
  std::stringstream ss;
  t.write_csv(ss);
  const DistTable back = DistTable::read_csv(ss);
  EXPECT_EQ(back.support(), t.support());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back.probs()[i], t.probs()[i]);
}

TEST(DistTable, SamplingFrequencies) {
  const DistTable t({Sequence{0}, Sequence{1}, Sequence{2}}, {0.2, 0.5, 0.3});
  Rng rng = make_stream(11, "dist");
  std::vector<Sequence> xs;
  for (int k = 0; k < 50000; ++k) xs.push_back(t.sample(rng));
  EXPECT_LE(tv_distance(empirical_histogram(xs), t), 0.01);
}

TEST(Histogram, CoarseGraining) {
  const std::vector<Sequence> xs{Sequence{0, 9}, Sequence{7, 15}, Sequence{8, 0}, Sequence{8, 0}};
  const DistTable h = empirical_histogram(xs, GridTask::coarse_bin);
  EXPECT_NEAR(h.prob(Sequence{0, 1}), 0.5, 1e-15);
  EXPECT_NEAR(h.prob(Sequence{1, 0}), 0.5, 1e-15);
  const DistTable fine = empirical_histogram(xs);
  EXPECT_NEAR(tv_distance(coarse_grain(fine, GridTask::coarse_bin), h), 0.0, 1e-15);
  EXPECT_THROW(empirical_histogram(std::vector<Sequence>{}), InvalidInput);
}
