#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mdmsteer/core.hpp"

namespace mdmsteer {

// Learned log-partition predictor log Z(x_t). Input features: the mean over
// positions of a position-aware token embedding, the masked fraction, t and
// sinusoidal time features; one GELU hidden layer; scalar output.
class LogZHead {
 public:
  struct Pass {
    double value = 0.0;
    std::vector<double> features;
    std::vector<double> pre_act;
    std::vector<int> emb_rows;
  };

  LogZHead(Vocabulary vocab, int length, int embed_dim, int hidden, std::uint64_t seed);

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }
  std::string architecture() const;
  static LogZHead from_architecture(const std::string& text, std::uint64_t seed = 0);

  Pass forward(const MaskedSample& xt) const;
  double operator()(const MaskedSample& xt) const { return forward(xt).value; }
  // grad += dvalue * d head / d params
  void backward(const Pass& pass, double dvalue, std::span<double> grad) const;

  // Makes the head output the given constant for every input.
  void set_constant(double value);

 private:
  std::size_t feature_dim() const;

  Vocabulary vocab_;
  int length_;
  int embed_dim_;
  int hidden_;
  std::size_t off_emb_, off_w_, off_b_, off_out_, off_bias_;
  std::vector<double> params_;
};

}  // namespace mdmsteer
