#include "mdmsteer/grad_estimator.hpp"

#include <cmath>
#include <vector>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

namespace {

std::vector<double> softmax_of(std::span<const double> z, double scale = 1.0) {
  std::vector<double> p(z.begin(), z.end());
  for (double& v : p) v *= scale;
  softmax_inplace(p);
  return p;
}

// dz += w * p * (g - <p, g>)
void softmax_vjp(const std::vector<double>& p, std::span<const double> g, double w, std::span<double> dz) {
  double dot = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) dot += p[v] * g[v];
  for (std::size_t v = 0; v < p.size(); ++v) dz[v] += w * p[v] * (g[v] - dot);
}

}  // namespace

std::string to_string(GradEstimatorKind kind) {
  return kind == GradEstimatorKind::kReinmax ? "reinmax" : "straight-through";
}

GradEstimatorKind grad_estimator_from_string(const std::string& text) {
  if (text == "straight-through" || text == "st") return GradEstimatorKind::kStraightThrough;
  if (text == "reinmax") return GradEstimatorKind::kReinmax;
  throw ConfigError("unknown gradient estimator '" + text + "'");
}

RelaxedDraw::RelaxedDraw(GradEstimatorKind kind, std::span<const double> ref_logits, int index, double tau)
    : kind_(kind), index_(index) {
  const std::size_t k = ref_logits.size();
  if (index < 0 || static_cast<std::size_t>(index) >= k) throw InvalidInput("relaxed draw index out of range");
  if (!(tau > 0.0)) throw InvalidInput("reinmax temperature must be positive");
  if (kind == GradEstimatorKind::kReinmax) {
    const auto soft = softmax_of(ref_logits, 1.0 / tau);
    shift_.resize(k);
    for (std::size_t v = 0; v < k; ++v) {
      const double onehot = static_cast<int>(v) == index ? 1.0 : 0.0;
      shift_[v] = std::log(0.5 * (onehot + soft[v])) - ref_logits[v];
    }
  }
  ref_value_.assign(k, 0.0);
  std::vector<double> surrogate(k);
  value(ref_logits, surrogate);
  // value() subtracts ref_value_, currently zero, so surrogate holds D + r(z_ref).
  for (std::size_t v = 0; v < k; ++v) {
    const double onehot = static_cast<int>(v) == index ? 1.0 : 0.0;
    ref_value_[v] = surrogate[v] - onehot;
  }
}

void RelaxedDraw::value(std::span<const double> z, std::span<double> out) const {
  const std::size_t k = z.size();
  const auto p0 = softmax_of(z);
  std::vector<double> r(k);
  if (kind_ == GradEstimatorKind::kStraightThrough) {
    r = p0;
  } else {
    std::vector<double> shifted(k);
    for (std::size_t v = 0; v < k; ++v) shifted[v] = shift_[v] + z[v];
    const auto p1 = softmax_of(shifted);
    for (std::size_t v = 0; v < k; ++v) r[v] = 2.0 * p1[v] - 0.5 * p0[v];
  }
  for (std::size_t v = 0; v < k; ++v) {
    out[v] = (static_cast<int>(v) == index_ ? 1.0 : 0.0) + r[v] - ref_value_[v];
  }
}

void RelaxedDraw::backward(std::span<const double> z, std::span<const double> g, std::span<double> dz) const {
  const auto p0 = softmax_of(z);
  if (kind_ == GradEstimatorKind::kStraightThrough) {
    softmax_vjp(p0, g, 1.0, dz);
    return;
  }
  std::vector<double> shifted(z.size());
  for (std::size_t v = 0; v < z.size(); ++v) shifted[v] = shift_[v] + z[v];
  softmax_vjp(softmax_of(shifted), g, 2.0, dz);
  softmax_vjp(p0, g, -0.5, dz);
}

void estimator_backward(GradEstimatorKind kind, std::span<const double> logits, int index,
                        std::span<const double> g, std::span<double> dz, double tau) {
  RelaxedDraw(kind, logits, index, tau).backward(logits, g, dz);
}

}  // namespace mdmsteer
