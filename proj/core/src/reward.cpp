#include "mdmsteer/reward.hpp"

#include <algorithm>
#include <cmath>

#include "mdmsteer/errors.hpp"

namespace mdmsteer {

namespace {

double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }
double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_rows(std::span<const double> rows, int length, int classes, std::span<double> grad) {
  const std::size_t cells = static_cast<std::size_t>(length) * static_cast<std::size_t>(classes);
  if (rows.size() != cells || grad.size() != cells) throw InvalidInput("relaxed reward: row buffer shape mismatch");
}

}  // namespace

RewardModel::RewardModel(double inverse_temperature) : beta_(inverse_temperature) {
  if (!(inverse_temperature > 0.0)) throw InvalidInput("reward inverse temperature must be positive");
}

double RewardModel::log_reward(const Sequence& x0) const {
  const double raw = raw_log_reward(x0);
  return beta_ * std::max(kLogFloor, std::isnan(raw) ? kLogFloor : raw);
}

double RewardModel::relaxed_log_reward(std::span<const double> rows, int length, int classes,
                                       std::span<double> grad) const {
  if (!has_relaxed()) throw ConfigError("reward '" + describe() + "' has no relaxed (differentiable) form");
  check_rows(rows, length, classes, grad);
  const double raw = raw_relaxed(rows, length, classes, grad);
  if (raw < kLogFloor) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return beta_ * kLogFloor;
  }
  for (double& g : grad) g *= beta_;
  return beta_ * raw;
}

double RewardModel::raw_relaxed(std::span<const double>, int, int, std::span<double>) const {
  throw ConfigError("reward '" + describe() + "' has no relaxed (differentiable) form");
}

double ConstantReward::raw_relaxed(std::span<const double>, int, int, std::span<double> grad) const {
  std::fill(grad.begin(), grad.end(), 0.0);
  return log_value_;
}

AdditiveReward::AdditiveReward(int length, int classes, std::vector<double> weights, double inverse_temperature)
    : RewardModel(inverse_temperature), length_(length), classes_(classes), weights_(std::move(weights)) {
  if (weights_.size() != static_cast<std::size_t>(length) * static_cast<std::size_t>(classes)) {
    throw InvalidInput("additive reward: weight table must be length x classes");
  }
}

double AdditiveReward::weight(int position, Token token) const {
  return weights_[static_cast<std::size_t>(position) * static_cast<std::size_t>(classes_) +
                  static_cast<std::size_t>(token)];
}

double AdditiveReward::raw_log_reward(const Sequence& x0) const {
  if (x0.size() != length_) throw InvalidInput("additive reward: length mismatch");
  double total = 0.0;
  for (int i = 0; i < length_; ++i) {
    if (x0[i] < 0 || x0[i] >= classes_) throw InvalidInput("additive reward: token outside clean vocabulary");
    total += weight(i, x0[i]);
  }
  return total;
}

double AdditiveReward::raw_relaxed(std::span<const double> rows, int length, int classes,
                                   std::span<double> grad) const {
  if (length != length_ || classes != classes_) throw InvalidInput("additive reward: relaxed shape mismatch");
  double total = 0.0;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    total += rows[c] * weights_[c];
    grad[c] = weights_[c];
  }
  return total;
}

double TableReward::raw_log_reward(const Sequence& x0) const {
  const auto it = table_.find(x0);
  return it == table_.end() ? fallback_ : it->second;
}

LogisticReward::LogisticReward(int length, int classes, std::vector<double> weights, double bias,
                               double inverse_temperature)
    : RewardModel(inverse_temperature),
      length_(length),
      classes_(classes),
      weights_(std::move(weights)),
      bias_(bias) {
  if (weights_.size() != static_cast<std::size_t>(length) * static_cast<std::size_t>(classes)) {
    throw InvalidInput("logistic reward: weight table must be length x classes");
  }
}

double LogisticReward::raw_log_reward(const Sequence& x0) const {
  if (x0.size() != length_) throw InvalidInput("logistic reward: length mismatch");
  double z = bias_;
  for (int i = 0; i < length_; ++i) {
    if (x0[i] < 0 || x0[i] >= classes_) throw InvalidInput("logistic reward: token outside clean vocabulary");
    z += weights_[static_cast<std::size_t>(i) * static_cast<std::size_t>(classes_) + static_cast<std::size_t>(x0[i])];
  }
  return log_sigmoid(z);
}

double LogisticReward::raw_relaxed(std::span<const double> rows, int length, int classes,
                                   std::span<double> grad) const {
  if (length != length_ || classes != classes_) throw InvalidInput("logistic reward: relaxed shape mismatch");
  double z = bias_;
  for (std::size_t c = 0; c < rows.size(); ++c) z += rows[c] * weights_[c];
  const double slope = 1.0 - sigmoid(z);
  for (std::size_t c = 0; c < rows.size(); ++c) grad[c] = slope * weights_[c];
  return log_sigmoid(z);
}

}  // namespace mdmsteer
