#include "mdmsteer/logz_head.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"
#include "mdmsteer/rng.hpp"

namespace mdmsteer {

LogZHead::LogZHead(Vocabulary vocab, int length, int embed_dim, int hidden, std::uint64_t seed)
    : vocab_(vocab), length_(length), embed_dim_(embed_dim), hidden_(hidden) {
  if (length < 1 || embed_dim < 1 || hidden < 1) throw InvalidInput("logZ head dimensions must be positive");
  const std::size_t e = static_cast<std::size_t>(embed_dim);
  const std::size_t g = static_cast<std::size_t>(hidden);
  off_emb_ = 0;
  off_w_ = off_emb_ + static_cast<std::size_t>(length) * static_cast<std::size_t>(vocab.size()) * e;
  off_b_ = off_w_ + g * feature_dim();
  off_out_ = off_b_ + g;
  off_bias_ = off_out_ + g;
  params_.assign(off_bias_ + 1, 0.0);

  Rng rng = make_stream(seed, "logz-head-init");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = off_emb_; i < off_w_; ++i) params_[i] = normal(rng);
  const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim()));
  for (std::size_t i = off_w_; i < off_b_; ++i) params_[i] = scale * normal(rng);
  // Output layer starts at zero so the head initially predicts log Z = 0.
}

std::size_t LogZHead::feature_dim() const { return static_cast<std::size_t>(embed_dim_) + 2 + kTimeFeatures; }

std::string LogZHead::architecture() const {
  std::ostringstream out;
  out << "kind=logz;d=" << vocab_.size() << ";n=" << length_ << ";embed=" << embed_dim_ << ";hidden=" << hidden_;
  return out.str();
}

LogZHead LogZHead::from_architecture(const std::string& text, std::uint64_t seed) {
  std::map<std::string, std::string> fields;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidInput("malformed logZ head descriptor: " + text);
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  if (fields["kind"] != "logz") throw InvalidInput("not a logZ head descriptor: " + text);
  try {
    return LogZHead(Vocabulary(std::stoi(fields.at("d"))), std::stoi(fields.at("n")), std::stoi(fields.at("embed")),
                    std::stoi(fields.at("hidden")), seed);
  } catch (const std::out_of_range&) {
    throw InvalidInput("incomplete logZ head descriptor: " + text);
  }
}

LogZHead::Pass LogZHead::forward(const MaskedSample& xt) const {
  if (xt.seq.size() != length_) throw InvalidInput("logZ head: length mismatch");
  xt.seq.validate(vocab_);
  const std::size_t e = static_cast<std::size_t>(embed_dim_);
  const std::size_t g = static_cast<std::size_t>(hidden_);
  const std::size_t f = feature_dim();
  Pass pass;
  pass.features.assign(f, 0.0);
  pass.emb_rows.resize(static_cast<std::size_t>(length_));
  const double inv_n = 1.0 / static_cast<double>(length_);
  for (int i = 0; i < length_; ++i) {
    const int row = i * vocab_.size() + xt.seq[i];
    pass.emb_rows[static_cast<std::size_t>(i)] = row;
    const double* emb = params_.data() + off_emb_ + static_cast<std::size_t>(row) * e;
    for (std::size_t c = 0; c < e; ++c) pass.features[c] += inv_n * emb[c];
  }
  pass.features[e] = static_cast<double>(xt.seq.mask_count(vocab_)) * inv_n;
  pass.features[e + 1] = xt.t;
  time_features(xt.t, std::span<double>(pass.features.data() + e + 2, kTimeFeatures));

  pass.pre_act.assign(g, 0.0);
  double value = params_[off_bias_];
  for (std::size_t j = 0; j < g; ++j) {
    const double* w = params_.data() + off_w_ + j * f;
    double acc = params_[off_b_ + j];
    for (std::size_t c = 0; c < f; ++c) acc += w[c] * pass.features[c];
    pass.pre_act[j] = acc;
    value += params_[off_out_ + j] * gelu(acc);
  }
  pass.value = value;
  return pass;
}

void LogZHead::backward(const Pass& pass, double dvalue, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw InvalidInput("logZ head: gradient buffer has wrong size");
  const std::size_t e = static_cast<std::size_t>(embed_dim_);
  const std::size_t g = static_cast<std::size_t>(hidden_);
  const std::size_t f = feature_dim();
  grad[off_bias_] += dvalue;
  std::vector<double> dfeat(f, 0.0);
  for (std::size_t j = 0; j < g; ++j) {
    const double a = pass.pre_act[j];
    grad[off_out_ + j] += dvalue * gelu(a);
    const double da = dvalue * params_[off_out_ + j] * gelu_grad(a);
    if (da == 0.0) continue;
    grad[off_b_ + j] += da;
    double* gw = grad.data() + off_w_ + j * f;
    const double* w = params_.data() + off_w_ + j * f;
    for (std::size_t c = 0; c < f; ++c) {
      gw[c] += da * pass.features[c];
      dfeat[c] += da * w[c];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(length_);
  for (int row : pass.emb_rows) {
    double* ge = grad.data() + off_emb_ + static_cast<std::size_t>(row) * e;
    for (std::size_t c = 0; c < e; ++c) ge[c] += inv_n * dfeat[c];
  }
}

void LogZHead::set_constant(double value) {
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(off_out_),
            params_.begin() + static_cast<std::ptrdiff_t>(off_bias_), 0.0);
  params_[off_bias_] = value;
}

}  // namespace mdmsteer
