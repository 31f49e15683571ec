#pragma once

#include <compare>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mdmsteer/rng.hpp"

namespace mdmsteer {

using Token = std::int32_t;

// d categories; the last identifier (d-1) is the absorbing mask token.
class Vocabulary {
 public:
  explicit Vocabulary(int size);

  int size() const { return size_; }
  int clean_size() const { return size_ - 1; }
  Token mask_id() const { return size_ - 1; }
  bool is_mask(Token t) const { return t == mask_id(); }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  int size_;
};

class Sequence {
 public:
  Sequence() = default;
  explicit Sequence(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}
  Sequence(std::initializer_list<Token> tokens) : tokens_(tokens) {}

  static Sequence all_masked(const Vocabulary& vocab, int length);

  int size() const { return static_cast<int>(tokens_.size()); }
  Token operator[](int i) const { return tokens_[static_cast<std::size_t>(i)]; }
  Token& operator[](int i) { return tokens_[static_cast<std::size_t>(i)]; }
  const std::vector<Token>& tokens() const { return tokens_; }

  bool is_clean(const Vocabulary& vocab) const;
  int mask_count(const Vocabulary& vocab) const;
  // Throws InvalidInput if a token id is out of range.
  void validate(const Vocabulary& vocab) const;
  // Hyphen-joined ids, e.g. "5-0-127".
  std::string to_string() const;

  friend auto operator<=>(const Sequence&, const Sequence&) = default;
  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  std::vector<Token> tokens_;
};

struct MaskedSample {
  Sequence seq;
  double t = 0.0;
};

class NoiseSchedule {
 public:
  enum class Kind { kLinear, kLogLinear };

  static NoiseSchedule linear();
  static NoiseSchedule log_linear(double sigma_min = 1e-4, double sigma_max = 20.0);

  Kind kind() const { return kind_; }
  double sigma_min() const { return sigma_min_; }
  double sigma_max() const { return sigma_max_; }

  // alpha(0) = 1 and alpha(1) = 0 exactly. Throws DomainError outside [0,1].
  double alpha(double t) const;
  // d alpha / dt on the open interval (0,1).
  double alpha_prime(double t) const;
  // ELBO weight -alpha'(t) / (1 - alpha(t)).
  double elbo_weight(double t) const;

  std::string descriptor() const;
  static NoiseSchedule from_descriptor(const std::string& text);

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  NoiseSchedule(Kind kind, double smin, double smax) : kind_(kind), sigma_min_(smin), sigma_max_(smax) {}
  double sigma(double t) const;

  Kind kind_;
  double sigma_min_;
  double sigma_max_;
};

// Uniform grid t(i) = i / T.
class TimeGrid {
 public:
  explicit TimeGrid(int steps);
  int steps() const { return steps_; }
  double time(int i) const;

 private:
  int steps_;
};

// Each position keeps x0 with probability alpha_t, otherwise becomes the mask.
MaskedSample mask_forward(const Vocabulary& vocab, const NoiseSchedule& schedule, const Sequence& x0,
                          double t, Rng& rng);

// Sum of per-position log kernel probabilities; kNegInf when unreachable.
double forward_logprob(const Vocabulary& vocab, const NoiseSchedule& schedule, const MaskedSample& xt,
                       const Sequence& x0);

// Draws x_s from the forward process at time s <= t conditioned on (x0, xt).
MaskedSample bridge_sample(const Vocabulary& vocab, const NoiseSchedule& schedule, const Sequence& x0,
                           const MaskedSample& xt, double s, Rng& rng);

}  // namespace mdmsteer
