#include "mdmsteer/core.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

Vocabulary::Vocabulary(int size) : size_(size) {
  if (size < 2) throw InvalidInput("vocabulary size must be >= 2, got " + std::to_string(size));
}

Sequence Sequence::all_masked(const Vocabulary& vocab, int length) {
  if (length < 1) throw InvalidInput("sequence length must be >= 1");
  return Sequence(std::vector<Token>(static_cast<std::size_t>(length), vocab.mask_id()));
}

bool Sequence::is_clean(const Vocabulary& vocab) const { return mask_count(vocab) == 0; }

int Sequence::mask_count(const Vocabulary& vocab) const {
  int count = 0;
  for (Token t : tokens_) count += vocab.is_mask(t) ? 1 : 0;
  return count;
}

void Sequence::validate(const Vocabulary& vocab) const {
  if (tokens_.empty()) throw InvalidInput("empty sequence");
  for (Token t : tokens_) {
    if (t < 0 || t >= vocab.size()) {
      throw InvalidInput("token id " + std::to_string(t) + " outside vocabulary of size " +
                         std::to_string(vocab.size()));
    }
  }
}

std::string Sequence::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(tokens_[i]);
  }
  return out;
}

NoiseSchedule NoiseSchedule::linear() { return NoiseSchedule(Kind::kLinear, 0.0, 0.0); }

NoiseSchedule NoiseSchedule::log_linear(double sigma_min, double sigma_max) {
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) {
    throw InvalidInput("log-linear schedule needs 0 < sigma_min < sigma_max");
  }
  return NoiseSchedule(Kind::kLogLinear, sigma_min, sigma_max);
}

double NoiseSchedule::sigma(double t) const {
  return std::pow(sigma_min_, 1.0 - t) * std::pow(sigma_max_, t);
}

double NoiseSchedule::alpha(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule time outside [0,1]: " + std::to_string(t));
  if (t == 0.0) return 1.0;
  if (t == 1.0) return 0.0;
  if (kind_ == Kind::kLinear) return 1.0 - t;
  return std::exp(-sigma(t));
}

double NoiseSchedule::alpha_prime(double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule time outside [0,1]: " + std::to_string(t));
  if (kind_ == Kind::kLinear) return -1.0;
  const double sig = sigma(t);
  return -sig * std::log(sigma_max_ / sigma_min_) * std::exp(-sig);
}

double NoiseSchedule::elbo_weight(double t) const {
  const double one_minus = 1.0 - alpha(t);
  if (one_minus <= 0.0) throw DomainError("ELBO weight undefined where alpha(t) = 1");
  return -alpha_prime(t) / one_minus;
}

std::string NoiseSchedule::descriptor() const {
  if (kind_ == Kind::kLinear) return "linear";
  char buf[96];
  std::snprintf(buf, sizeof buf, "log-linear:%.17g:%.17g", sigma_min_, sigma_max_);
  return buf;
}

NoiseSchedule NoiseSchedule::from_descriptor(const std::string& text) {
  if (text == "linear") return linear();
  const std::string prefix = "log-linear";
  if (text.rfind(prefix, 0) == 0) {
    if (text == prefix) return log_linear();
    std::istringstream in(text.substr(prefix.size()));
    char colon1 = 0, colon2 = 0;
    double smin = 0, smax = 0;
    if ((in >> colon1 >> smin >> colon2 >> smax) && colon1 == ':' && colon2 == ':') {
      return log_linear(smin, smax);
    }
  }
  throw InvalidInput("unknown schedule descriptor '" + text + "'");
}

TimeGrid::TimeGrid(int steps) : steps_(steps) {
  if (steps < 1) throw InvalidInput("time grid needs at least one step");
}

double TimeGrid::time(int i) const {
  if (i < 0 || i > steps_) throw DomainError("grid index out of range");
  if (i == steps_) return 1.0;
  return static_cast<double>(i) / static_cast<double>(steps_);
}

MaskedSample mask_forward(const Vocabulary& vocab, const NoiseSchedule& schedule, const Sequence& x0,
                          double t, Rng& rng) {
  x0.validate(vocab);
  if (!x0.is_clean(vocab)) throw InvalidInput("mask_forward expects a clean sequence");
  const double keep = schedule.alpha(t);
  MaskedSample out{x0, t};
  for (int i = 0; i < x0.size(); ++i) {
    if (!(uniform01(rng) < keep)) out.seq[i] = vocab.mask_id();
  }
  return out;
}

double forward_logprob(const Vocabulary& vocab, const NoiseSchedule& schedule, const MaskedSample& xt,
                       const Sequence& x0) {
  if (xt.seq.size() != x0.size()) throw InvalidInput("forward_logprob: length mismatch");
  if (!x0.is_clean(vocab)) throw InvalidInput("forward_logprob: x0 must be clean");
  const double a = schedule.alpha(xt.t);
  double total = 0.0;
  for (int i = 0; i < x0.size(); ++i) {
    const Token tok = xt.seq[i];
    double p = 0.0;
    if (vocab.is_mask(tok)) {
      p = 1.0 - a;
    } else if (tok == x0[i]) {
      p = a;
    }
    if (p <= 0.0) return kNegInf;
    total += std::log(p);
  }
  return total;
}

MaskedSample bridge_sample(const Vocabulary& vocab, const NoiseSchedule& schedule, const Sequence& x0,
                           const MaskedSample& xt, double s, Rng& rng) {
  if (s > xt.t) throw DomainError("bridge_sample: s must not exceed t");
  if (s < 0.0) throw DomainError("bridge_sample: s must be >= 0");
  if (xt.seq.size() != x0.size()) throw InvalidInput("bridge_sample: length mismatch");
  if (!x0.is_clean(vocab)) throw InvalidInput("bridge_sample: x0 must be clean");
  for (int i = 0; i < x0.size(); ++i) {
    if (!vocab.is_mask(xt.seq[i]) && xt.seq[i] != x0[i]) {
      throw InvalidInput("bridge_sample: xt disagrees with x0 at position " + std::to_string(i));
    }
  }
  if (s == xt.t) return xt;
  const double denom = 1.0 - schedule.alpha(xt.t);
  const double stay = denom > 0.0 ? (1.0 - schedule.alpha(s)) / denom : 0.0;
  MaskedSample out{xt.seq, s};
  for (int i = 0; i < x0.size(); ++i) {
    if (!vocab.is_mask(xt.seq[i])) continue;
    if (!(uniform01(rng) < stay)) out.seq[i] = x0[i];
  }
  return out;
}

}  // namespace mdmsteer
