#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mdmsteer/core.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/oracle.hpp"
#include "mdmsteer/reward.hpp"

namespace mdmsteer {

// ---------------------------------------------------------------- grid

// Two tokens (x, y) on a side x side lattice. The prior puts its mass on a
// 4 x 4 arrangement of squares; every cell outside the squares has eps_prior
// times the density of a cell inside. The reward keeps the half-plane
// x >= threshold.
struct GridTask {
  int side = 128;
  int squares_per_axis = 4;
  int square_side = 16;
  int period = 32;
  int offset = 8;
  double eps_prior = 1e-4;
  int threshold = 64;

  Vocabulary vocab() const { return Vocabulary(side + 1); }
  int length() const { return 2; }

  bool in_square(int x, int y) const;
  bool in_square(const Sequence& s) const { return in_square(s[0], s[1]); }
  bool satisfies_reward(const Sequence& s) const { return s[0] >= threshold; }
  // Weight of the uniform-over-grid component in the prior mixture.
  double uniform_weight() const;

  Sequence sample_prior(Rng& rng) const;
  DistTable prior_table() const;
  // Index of the 8 x 8 coarse bin.
  static Sequence coarse_bin(const Sequence& s) { return Sequence{s[0] / 8, s[1] / 8}; }
};

Sequence grid_prior_sample(const GridTask& task, Rng& rng);

// Floored half-plane indicator. The relaxation is log of the row-0 mass on
// tokens >= threshold, floored like the hard reward.
class GridReward final : public RewardModel {
 public:
  explicit GridReward(GridTask task = {}, double inverse_temperature = 1.0)
      : RewardModel(inverse_temperature), task_(task) {}
  bool has_relaxed() const override { return true; }
  std::string describe() const override { return "grid"; }

 protected:
  double raw_log_reward(const Sequence& x0) const override;
  double raw_relaxed(std::span<const double> rows, int length, int classes, std::span<double> grad) const override;

 private:
  GridTask task_;
};

double grid_log_reward(const Sequence& x0, const GridTask& task = {});

// ---------------------------------------------------------------- datasets

struct TokenDataset {
  int vocab_size = 0;
  std::vector<Sequence> items;
  std::string source;

  int length() const { return items.empty() ? 0 : items.front().size(); }
};

// One sequence per line, space-separated ids; '#' starts a comment line.
// Throws ParseError (with line number) on malformed lines, inconsistent
// lengths, mask ids or ids >= vocab_size.
TokenDataset load_dataset(const std::string& path, int vocab_size);
void save_dataset(const TokenDataset& ds, const std::string& path);

// "sequence,log_reward" rows (hyphen-joined ids) into a lookup reward.
std::unique_ptr<TableReward> load_reward_table(const std::string& path, double fallback,
                                               double inverse_temperature = 1.0);

// ---------------------------------------------------------------- tiny instances

// Tabular model whose rows do not depend on context or time: every masked
// position i predicts probs[i] (length x classes, rows positive).
std::unique_ptr<TabularDenoiser> make_constant_tabular(const Vocabulary& vocab, int length, int buckets,
                                                       const std::vector<double>& probs);

// The tabular model whose rows are the given model's rows tilted by an
// additive reward: row'[v] proportional to row[v] * exp(w_i[v]). For a
// mean-field pretrained model this is the exact denoising posterior.
std::unique_ptr<TabularDenoiser> tilt_tabular(const TabularDenoiser& model, const AdditiveReward& reward);

// Product law of a constant tabular model's rows, i.e. its endpoint law.
DistTable mean_field_table(const Vocabulary& vocab, int length, const std::vector<double>& probs);

// ---------------------------------------------------------------- two-class patterns

// Binary images of length n drawn from two prototypes with independent pixel
// flips. The reward is a logistic classifier for class 1 whose logit is
// `scale` times the signed agreement with prototype 1 minus prototype 0.
struct TwoClassTask {
  int length = 16;
  double flip = 0.1;
  double scale = 1.0;
  double inverse_temperature = 5.0;
  std::uint64_t pattern_seed = 7;

  Vocabulary vocab() const { return Vocabulary(3); }
  std::vector<Sequence> prototypes() const;
  // Returns the image; writes the class into label when given.
  Sequence sample(Rng& rng, int* label = nullptr) const;
  Sequence sample_class(int label, Rng& rng) const;
  std::unique_ptr<LogisticReward> reward() const;
};

}  // namespace mdmsteer
