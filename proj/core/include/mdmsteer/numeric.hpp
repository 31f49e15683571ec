#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace mdmsteer {

// Stand-in for log(0). Arithmetic on it stays finite; anything at or below
// kNegInfThreshold is treated as -inf by comparisons.
inline constexpr double kNegInf = -1e30;
inline constexpr double kNegInfThreshold = -1e29;

inline bool is_neg_inf(double x) { return x <= kNegInfThreshold; }

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

double logsumexp(std::span<const double> xs);

// In-place numerically stable softmax / log-softmax over one row.
void softmax_inplace(std::span<double> row);
void log_softmax(std::span<const double> logits, std::span<double> out);

// Samples an index from an unnormalized-safe probability row using a single
// uniform variate u in [0,1).
int categorical_from_uniform(std::span<const double> probs, double u);

// Exact (erf-based) GELU and its derivative.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return cdf + x * pdf;
}

// Eight sinusoidal features of t in [0,1]: sin/cos at frequencies pi*2^j.
inline constexpr int kTimeFeatures = 8;
void time_features(double t, std::span<double> out);

}  // namespace mdmsteer
