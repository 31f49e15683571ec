#include "mdmsteer/numeric.hpp"

#include <algorithm>
#include <limits>

namespace mdmsteer {

double logsumexp(std::span<const double> xs) {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (is_neg_inf(hi)) return kNegInf;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

void softmax_inplace(std::span<double> row) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : row) hi = std::max(hi, x);
  double total = 0.0;
  for (double& x : row) {
    x = std::exp(x - hi);
    total += x;
  }
  for (double& x : row) x /= total;
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : logits) hi = std::max(hi, x);
  double total = 0.0;
  for (double x : logits) total += std::exp(x - hi);
  const double lse = hi + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

int categorical_from_uniform(std::span<const double> probs, double u) {
  double total = 0.0;
  for (double p : probs) total += p;
  double target = u * total;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    if (target < probs[i]) return static_cast<int>(i);
    target -= probs[i];
  }
  return last_positive;
}

void time_features(double t, std::span<double> out) {
  double freq = M_PI;
  for (int j = 0; j < kTimeFeatures / 2; ++j) {
    out[2 * j] = std::sin(freq * t);
    out[2 * j + 1] = std::cos(freq * t);
    freq *= 2.0;
  }
}

}  // namespace mdmsteer
