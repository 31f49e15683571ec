#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mdmsteer/core.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/reward.hpp"

namespace mdmsteer {

// Finite distribution over clean sequences, kept sorted by sequence.
class DistTable {
 public:
  DistTable() = default;
  // Sorts by sequence. Throws InvalidInput on duplicates, negative entries
  // or a total further than 1e-10 from 1.
  DistTable(std::vector<Sequence> support, std::vector<double> probs);
  // Normalizes nonnegative weights first. Throws DegenerateTarget if they sum to 0.
  static DistTable from_weights(std::vector<Sequence> support, std::vector<double> weights);
  // Normalizes exp(log_weights) in log space.
  static DistTable from_log_weights(std::vector<Sequence> support, std::span<const double> log_weights);

  std::size_t size() const { return support_.size(); }
  const std::vector<Sequence>& support() const { return support_; }
  const std::vector<double>& probs() const { return probs_; }
  // 0 for sequences outside the support.
  double prob(const Sequence& x) const;
  // Draws a sequence by inverse CDF.
  const Sequence& sample(Rng& rng) const;

  // Two columns "sequence,probability"; the sequence is hyphen-joined ids.
  void write_csv(std::ostream& out) const;
  static DistTable read_csv(std::istream& in);

 private:
  std::vector<Sequence> support_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

// All clean sequences of length n over d - 1 clean tokens, lexicographic.
// Throws SizeError past 1e6 sequences.
std::vector<Sequence> enumerate_sequences(int d, int n);

// Exact log-probability that ancestral_sample on this grid returns x0,
// summing over unmasking orders with a dynamic program over mask patterns
// (including the final-step forcing rule). Throws SizeError when
// 2^n * T > 1e6.
double exact_mdm_likelihood(const Denoiser& model, const Sequence& x0, const TimeGrid& grid,
                            const NoiseSchedule& schedule);

// Exact endpoint law of ancestral_sample over every clean sequence.
DistTable exact_endpoint_law(const Denoiser& model, const TimeGrid& grid, const NoiseSchedule& schedule);

// pi_0 proportional to p_pre * R.
DistTable exact_target(const DistTable& pre_table, const RewardModel& reward);

struct DenoisingPosterior {
  DistTable posterior;
  double log_z = 0.0;
};

// pi_t(x0|xt) proportional to p_pre(x0|xt) R(x0) over endpoints consistent
// with xt, and log Z = log sum of p_pre R.
DenoisingPosterior exact_denoising_posterior(const Denoiser& pre, const MaskedSample& xt, const RewardModel& reward);

// Total variation and KL(p || q) over the union of supports. KL throws
// DomainError where p > 0 and q = 0.
double tv_distance(const DistTable& p, const DistTable& q);
double kl_divergence(const DistTable& p, const DistTable& q);

// Maps a sample to its bin; the identity when empty.
using Binning = std::function<Sequence(const Sequence&)>;

DistTable empirical_histogram(std::span<const Sequence> samples, const Binning& binning = {});
// Pushes a table through a binning, summing probabilities per bin.
DistTable coarse_grain(const DistTable& table, const Binning& binning);

}  // namespace mdmsteer
