#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mdmsteer/core.hpp"
#include "mdmsteer/rng.hpp"

namespace mdmsteer {

struct CallCounter;

// Per-position categorical over the d-1 clean tokens. Rows at unmasked input
// positions are the one-hot of the observed token; the mask token never
// receives mass.
struct DenoiserOutput {
  int length = 0;
  int classes = 0;
  std::vector<double> probs;
  std::vector<double> log_probs;

  std::span<const double> row(int i) const {
    return {probs.data() + static_cast<std::size_t>(i) * classes, static_cast<std::size_t>(classes)};
  }
  std::span<const double> log_row(int i) const {
    return {log_probs.data() + static_cast<std::size_t>(i) * classes, static_cast<std::size_t>(classes)};
  }
};

// Everything a backward pass needs: the input, the output and the
// model-specific activations recorded during the forward pass.
struct ForwardPass {
  MaskedSample input;
  DenoiserOutput out;
  std::vector<double> cache;
};

// Mean-parametrized denoiser mu_theta(x_t, t). Parameters live in one flat
// vector so optimizers, EMA and checkpoints treat every model alike.
class Denoiser {
 public:
  Denoiser(Vocabulary vocab, int length, std::size_t num_params);
  virtual ~Denoiser() = default;

  const Vocabulary& vocab() const { return vocab_; }
  int length() const { return length_; }
  int classes() const { return vocab_.clean_size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  virtual std::string kind() const = 0;
  // Flat key=value description sufficient to rebuild the model shape.
  virtual std::string architecture() const = 0;
  virtual std::unique_ptr<Denoiser> clone() const = 0;

  ForwardPass forward(const MaskedSample& xt) const;
  // Accumulates (+=) dLoss/dparams into grad. dlogits has length*classes
  // entries; rows at unmasked positions are ignored.
  void backward(const ForwardPass& pass, std::span<const double> dlogits, std::span<double> grad) const;

  DenoiserOutput predict_mean(const MaskedSample& xt) const { return forward(xt).out; }

 protected:
  virtual void compute_logits(const MaskedSample& xt, std::span<double> logits,
                              std::vector<double>& cache) const = 0;
  virtual void backprop(const MaskedSample& xt, const std::vector<double>& cache,
                        std::span<const double> dlogits, std::span<double> grad) const = 0;

 private:
  Vocabulary vocab_;
  int length_;
  std::vector<double> params_;
};

// Logit table indexed by (position, context token, time bucket). The context
// token of position i is the current token at position (i+1) mod n, which
// for n = 1 is the position itself.
class TabularDenoiser final : public Denoiser {
 public:
  TabularDenoiser(Vocabulary vocab, int length, int buckets);

  std::string kind() const override { return "tabular"; }
  std::string architecture() const override;
  std::unique_ptr<Denoiser> clone() const override { return std::make_unique<TabularDenoiser>(*this); }

  int buckets() const { return buckets_; }
  int bucket(double t) const;
  std::size_t row_offset(int position, Token context, int bucket) const;
  std::span<double> logits_row(int position, Token context, int bucket);
  // Sets the row so that its softmax equals probs (entries must be > 0).
  void set_probabilities(int position, Token context, int bucket, std::span<const double> probs);

 protected:
  void compute_logits(const MaskedSample& xt, std::span<double> logits,
                      std::vector<double>& cache) const override;
  void backprop(const MaskedSample& xt, const std::vector<double>& cache, std::span<const double> dlogits,
                std::span<double> grad) const override;

 private:
  int buckets_;
};

struct MlpShape {
  int embed_dim = 64;
  int hidden = 256;
};

// Token embeddings of every position concatenated with sinusoidal time
// features, two GELU hidden layers (the second offset by a learned
// per-position vector) and an output head shared across positions.
class MlpDenoiser final : public Denoiser {
 public:
  MlpDenoiser(Vocabulary vocab, int length, MlpShape shape, std::uint64_t seed);

  std::string kind() const override { return "mlp"; }
  std::string architecture() const override;
  std::unique_ptr<Denoiser> clone() const override { return std::make_unique<MlpDenoiser>(*this); }
  const MlpShape& shape() const { return shape_; }

 protected:
  void compute_logits(const MaskedSample& xt, std::span<double> logits,
                      std::vector<double>& cache) const override;
  void backprop(const MaskedSample& xt, const std::vector<double>& cache, std::span<const double> dlogits,
                std::span<double> grad) const override;

 private:
  struct Layout {
    std::size_t emb, w1, b1, w2, b2, pos, wo, bo, total;
    int in_dim;
  };
  static Layout make_layout(const Vocabulary& vocab, int length, const MlpShape& shape);

  MlpShape shape_;
  Layout layout_;
};

// Rebuilds an untrained model from its architecture descriptor.
std::unique_ptr<Denoiser> make_denoiser(const std::string& architecture, std::uint64_t seed = 0);

// Per-position distribution over all d tokens (mask last) for the reverse
// step from xt.t to t_to. Row-major length x d.
std::vector<double> reverse_transition_dist(const Vocabulary& vocab, const DenoiserOutput& mu,
                                            const MaskedSample& xt, double t_to, const NoiseSchedule& schedule);

// Sum over masked positions of log mu[i][x0_i]; kNegInf if x0 disagrees with
// an unmasked position.
double endpoint_logprob(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& xt,
                        const Sequence& x0);

// Factorized one-shot draw of a clean endpoint from mu.
Sequence sample_endpoint(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& xt, Rng& rng);

// One reverse step x_t -> x_s. With force_clean, positions still masked
// after the step are filled with a draw from mu (the final-step rule).
MaskedSample sample_transition(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& x,
                               double s, const NoiseSchedule& schedule, bool force_clean, Rng& rng);

// log probability of the reverse step x_from -> x_to under mu, matching the
// law of sample_transition.
double transition_logprob(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& x_from,
                          const MaskedSample& x_to, const NoiseSchedule& schedule, bool force_clean);

// Gradient of transition_logprob with respect to the logits of mu's source
// model, accumulated into dlogits (length x classes) scaled by weight.
void transition_logprob_dlogits(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& x_from,
                                const MaskedSample& x_to, double weight, std::span<double> dlogits);

// Reverse process from all-mask at t = 1 down to t = 0 on the grid.
Sequence ancestral_sample(const Denoiser& model, const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
                          CallCounter* counter = nullptr, bool finetuned = false);

}  // namespace mdmsteer
