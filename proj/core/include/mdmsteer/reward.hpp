#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mdmsteer/core.hpp"

namespace mdmsteer {

// log R(x0) with a floor and an inverse-temperature exponent:
//   log R = beta * max(kLogFloor, log R_raw).
// Optionally exposes a relaxed variant on per-position simplex rows (length x
// classes) that agrees with log R on one-hot rows and has an analytic
// gradient.
class RewardModel {
 public:
  static constexpr double kLogFloor = -30.0;

  explicit RewardModel(double inverse_temperature = 1.0);
  virtual ~RewardModel() = default;

  double inverse_temperature() const { return beta_; }
  double log_reward(const Sequence& x0) const;

  virtual bool has_relaxed() const { return false; }
  // Returns the relaxed log reward and overwrites grad (same shape as rows)
  // with its gradient. Throws ConfigError when no relaxation exists.
  double relaxed_log_reward(std::span<const double> rows, int length, int classes, std::span<double> grad) const;

  virtual std::string describe() const = 0;

 protected:
  virtual double raw_log_reward(const Sequence& x0) const = 0;
  virtual double raw_relaxed(std::span<const double> rows, int length, int classes, std::span<double> grad) const;

 private:
  double beta_;
};

class ConstantReward final : public RewardModel {
 public:
  explicit ConstantReward(double log_value, double inverse_temperature = 1.0)
      : RewardModel(inverse_temperature), log_value_(log_value) {}
  bool has_relaxed() const override { return true; }
  std::string describe() const override { return "constant"; }

 protected:
  double raw_log_reward(const Sequence&) const override { return log_value_; }
  double raw_relaxed(std::span<const double> rows, int length, int classes, std::span<double> grad) const override;

 private:
  double log_value_;
};

// log R(x) = sum_i w[i][x_i]. Its relaxation sum_i <row_i, w_i> is linear in
// the rows, and the reward-tilted mean-field posterior stays mean-field.
class AdditiveReward final : public RewardModel {
 public:
  AdditiveReward(int length, int classes, std::vector<double> weights, double inverse_temperature = 1.0);
  bool has_relaxed() const override { return true; }
  std::string describe() const override { return "additive"; }
  double weight(int position, Token token) const;
  int length() const { return length_; }
  int classes() const { return classes_; }

 protected:
  double raw_log_reward(const Sequence& x0) const override;
  double raw_relaxed(std::span<const double> rows, int length, int classes, std::span<double> grad) const override;

 private:
  int length_;
  int classes_;
  std::vector<double> weights_;
};

// Arbitrary log reward given by lookup; unmatched sequences get fallback.
class TableReward final : public RewardModel {
 public:
  TableReward(std::map<Sequence, double> log_values, double fallback, double inverse_temperature = 1.0)
      : RewardModel(inverse_temperature), table_(std::move(log_values)), fallback_(fallback) {}
  std::string describe() const override { return "table"; }

 protected:
  double raw_log_reward(const Sequence& x0) const override;

 private:
  std::map<Sequence, double> table_;
  double fallback_;
};

// log sigmoid(bias + sum_i w[i][x_i]): the log-probability a linear
// classifier assigns to the positive class. Relaxed on expected features.
class LogisticReward final : public RewardModel {
 public:
  LogisticReward(int length, int classes, std::vector<double> weights, double bias, double inverse_temperature = 1.0);
  bool has_relaxed() const override { return true; }
  std::string describe() const override { return "logistic"; }

 protected:
  double raw_log_reward(const Sequence& x0) const override;
  double raw_relaxed(std::span<const double> rows, int length, int classes, std::span<double> grad) const override;

 private:
  int length_;
  int classes_;
  std::vector<double> weights_;
  double bias_;
};

}  // namespace mdmsteer
