#pragma once

#include <span>
#include <string>
#include <vector>

#include "mdmsteer/rng.hpp"

namespace mdmsteer {

// Surrogate gradients for one-hot categorical draws D ~ Cat(softmax(z)).
// The forward pass always emits the exact one-hot; backward maps dL/dD to
// dL/dz.
enum class GradEstimatorKind { kStraightThrough, kReinmax };

std::string to_string(GradEstimatorKind kind);
GradEstimatorKind grad_estimator_from_string(const std::string& text);

// Relaxed stand-in for D whose value equals D at the reference logits and
// whose Jacobian in z is the estimator's. Straight-through:
//   D + p(z) - p(z_ref),  p = softmax.
// Reinmax (temperature tau):
//   D + r(z) - r(z_ref),  r(z) = 2 softmax(c + z) - softmax(z) / 2,
//   c = log((D + softmax(z_ref / tau)) / 2) - z_ref.
class RelaxedDraw {
 public:
  RelaxedDraw(GradEstimatorKind kind, std::span<const double> ref_logits, int index, double tau = 1.0);

  int index() const { return index_; }
  // Writes the relaxed row at logits z.
  void value(std::span<const double> z, std::span<double> out) const;
  // dz += J(z)^T g, the estimator's backward pass at logits z.
  void backward(std::span<const double> z, std::span<const double> g, std::span<double> dz) const;

 private:
  GradEstimatorKind kind_;
  int index_;
  std::vector<double> ref_value_;
  std::vector<double> shift_;
};

// Backward pass of the estimator at the reference logits (z = z_ref):
// straight-through p * (g - <p, g>); Reinmax
// 2 p1 * (g - <p1, g>) - p0 * (g - <p0, g>) / 2.
void estimator_backward(GradEstimatorKind kind, std::span<const double> logits, int index,
                        std::span<const double> g, std::span<double> dz, double tau = 1.0);

}  // namespace mdmsteer
