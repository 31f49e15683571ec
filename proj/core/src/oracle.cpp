#include "mdmsteer/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

namespace {

constexpr double kEnumerationBudget = 1e6;

Sequence parse_sequence(const std::string& text, int line) {
  std::vector<Token> tokens;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, '-')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(part, &used);
      if (used != part.size() || v < 0) throw std::invalid_argument(part);
      tokens.push_back(v);
    } catch (const std::exception&) {
      throw ParseError("bad sequence '" + text + "'", line);
    }
  }
  if (tokens.empty()) throw ParseError("empty sequence", line);
  return Sequence(std::move(tokens));
}

}  // namespace

DistTable::DistTable(std::vector<Sequence> support, std::vector<double> probs) {
  if (support.size() != probs.size()) throw InvalidInput("DistTable: support and probabilities differ in size");
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return support[a] < support[b]; });
  support_.reserve(order.size());
  probs_.reserve(order.size());
  double total = 0.0;
  for (std::size_t idx : order) {
    if (!support_.empty() && support_.back() == support[idx]) {
      throw InvalidInput("DistTable: duplicate support entry " + support[idx].to_string());
    }
    if (!(probs[idx] >= 0.0)) throw InvalidInput("DistTable: negative probability");
    support_.push_back(std::move(support[idx]));
    probs_.push_back(probs[idx]);
    total += probs[idx];
    cdf_.push_back(total);
  }
  if (std::abs(total - 1.0) > 1e-10) throw InvalidInput("DistTable: probabilities sum to " + std::to_string(total));
}

DistTable DistTable::from_weights(std::vector<Sequence> support, std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidInput("DistTable: negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw DegenerateTarget("all weights are zero");
  for (double& w : weights) w /= total;
  return DistTable(std::move(support), std::move(weights));
}

DistTable DistTable::from_log_weights(std::vector<Sequence> support, std::span<const double> log_weights) {
  std::vector<double> finite;
  for (double l : log_weights) {
    if (!is_neg_inf(l)) finite.push_back(l);
  }
  if (finite.empty()) throw DegenerateTarget("all weights are zero");
  const double lse = logsumexp(finite);
  std::vector<double> probs(log_weights.size());
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = is_neg_inf(log_weights[i]) ? 0.0 : std::exp(log_weights[i] - lse);
  return from_weights(std::move(support), std::move(probs));
}

double DistTable::prob(const Sequence& x) const {
  const auto it = std::lower_bound(support_.begin(), support_.end(), x);
  if (it == support_.end() || *it != x) return 0.0;
  return probs_[static_cast<std::size_t>(it - support_.begin())];
}

const Sequence& DistTable::sample(Rng& rng) const {
  if (support_.empty()) throw InvalidInput("cannot sample from an empty table");
  const double u = uniform01(rng) * cdf_.back();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  if (it == cdf_.end()) --it;
  auto idx = static_cast<std::size_t>(it - cdf_.begin());
  while (probs_[idx] == 0.0 && idx > 0) --idx;
  return support_[idx];
}

void DistTable::write_csv(std::ostream& out) const {
  out << "sequence,probability\n";
  out.precision(17);
  for (std::size_t i = 0; i < support_.size(); ++i) out << support_[i].to_string() << ',' << probs_[i] << '\n';
}

DistTable DistTable::read_csv(std::istream& in) {
  std::string line;
  int lineno = 0;
  std::vector<Sequence> support;
  std::vector<double> probs;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("sequence", 0) == 0) continue;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("expected 'sequence,probability'", lineno);
    support.push_back(parse_sequence(line.substr(0, comma), lineno));
    try {
      probs.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ParseError("bad probability", lineno);
    }
  }
  return DistTable(std::move(support), std::move(probs));
}

std::vector<Sequence> enumerate_sequences(int d, int n) {
  if (d < 2 || n < 1) throw InvalidInput("enumerate_sequences needs d >= 2 and n >= 1");
  const int k = d - 1;
  if (std::pow(static_cast<double>(k), n) > kEnumerationBudget) throw SizeError("enumeration exceeds 1e6 sequences");
  std::vector<Sequence> out;
  std::vector<Token> cur(static_cast<std::size_t>(n), 0);
  while (true) {
    out.emplace_back(cur);
    int pos = n - 1;
    while (pos >= 0 && cur[static_cast<std::size_t>(pos)] == k - 1) cur[static_cast<std::size_t>(pos--)] = 0;
    if (pos < 0) break;
    ++cur[static_cast<std::size_t>(pos)];
  }
  return out;
}

double exact_mdm_likelihood(const Denoiser& model, const Sequence& x0, const TimeGrid& grid,
                            const NoiseSchedule& schedule) {
  const Vocabulary& vocab = model.vocab();
  const int n = model.length();
  if (x0.size() != n || !x0.is_clean(vocab)) throw InvalidInput("exact_mdm_likelihood: x0 must be clean of model length");
  x0.validate(vocab);
  if (std::ldexp(static_cast<double>(grid.steps()), n) > kEnumerationBudget) {
    throw SizeError("exact_mdm_likelihood: 2^n * T exceeds 1e6");
  }
  const std::size_t patterns = std::size_t{1} << n;
  // prob[mask]: probability of being at x0 with exactly the positions in
  // mask still masked.
  std::vector<double> prob(patterns, 0.0), next(patterns);
  prob[patterns - 1] = 1.0;
  for (int i = grid.steps(); i >= 1; --i) {
    const double t = grid.time(i);
    const double s = grid.time(i - 1);
    const double a_t = schedule.alpha(t);
    const double a_s = schedule.alpha(s);
    const bool force = i == 1;
    const double stay = force ? 0.0 : (1.0 - a_s) / (1.0 - a_t);
    const double move = force ? 1.0 : (a_s - a_t) / (1.0 - a_t);
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t m = 0; m < patterns; ++m) {
      if (prob[m] == 0.0) continue;
      if (m == 0) {
        next[0] += prob[0];
        continue;
      }
      MaskedSample x{x0, t};
      for (int p = 0; p < n; ++p) {
        if (m >> p & 1U) x.seq[p] = vocab.mask_id();
      }
      const DenoiserOutput mu = model.predict_mean(x);
      std::vector<double> unmask(static_cast<std::size_t>(n), 0.0);
      for (int p = 0; p < n; ++p) {
        if (m >> p & 1U) unmask[static_cast<std::size_t>(p)] = move * mu.row(p)[static_cast<std::size_t>(x0[p])];
      }
      // Every sub-pattern of m is a possible next pattern.
      for (std::size_t sub = m;; sub = (sub - 1) & m) {
        double w = prob[m];
        for (int p = 0; p < n && w > 0.0; ++p) {
          if (!(m >> p & 1U)) continue;
          w *= (sub >> p & 1U) ? stay : unmask[static_cast<std::size_t>(p)];
        }
        next[sub] += w;
        if (sub == 0) break;
      }
    }
    prob.swap(next);
  }
  return safe_log(prob[0]);
}

DistTable exact_endpoint_law(const Denoiser& model, const TimeGrid& grid, const NoiseSchedule& schedule) {
  auto support = enumerate_sequences(model.vocab().size(), model.length());
  std::vector<double> weights;
  weights.reserve(support.size());
  for (const auto& x : support) weights.push_back(std::exp(exact_mdm_likelihood(model, x, grid, schedule)));
  return DistTable::from_weights(std::move(support), std::move(weights));
}

DistTable exact_target(const DistTable& pre_table, const RewardModel& reward) {
  std::vector<double> logs;
  logs.reserve(pre_table.size());
  for (std::size_t i = 0; i < pre_table.size(); ++i) {
    const double p = pre_table.probs()[i];
    logs.push_back(p > 0.0 ? std::log(p) + reward.log_reward(pre_table.support()[i]) : kNegInf);
  }
  return DistTable::from_log_weights(pre_table.support(), logs);
}

DenoisingPosterior exact_denoising_posterior(const Denoiser& pre, const MaskedSample& xt, const RewardModel& reward) {
  const Vocabulary& vocab = pre.vocab();
  const int n = pre.length();
  if (xt.seq.size() != n) throw InvalidInput("exact_denoising_posterior: length mismatch");
  xt.seq.validate(vocab);
  std::vector<int> masked;
  for (int i = 0; i < n; ++i) {
    if (vocab.is_mask(xt.seq[i])) masked.push_back(i);
  }
  const int k = vocab.clean_size();
  if (std::pow(static_cast<double>(k), static_cast<double>(masked.size())) > kEnumerationBudget) {
    throw SizeError("exact_denoising_posterior: more than 1e6 reachable endpoints");
  }
  const DenoiserOutput mu = pre.predict_mean(xt);
  std::vector<Sequence> support;
  std::vector<double> logs;
  Sequence x = xt.seq;
  for (int i : masked) x[i] = 0;
  while (true) {
    const double lp = endpoint_logprob(vocab, mu, xt, x);
    support.push_back(x);
    logs.push_back(is_neg_inf(lp) ? kNegInf : lp + reward.log_reward(x));
    int j = static_cast<int>(masked.size()) - 1;
    while (j >= 0 && x[masked[static_cast<std::size_t>(j)]] == k - 1) x[masked[static_cast<std::size_t>(j--)]] = 0;
    if (j < 0) break;
    ++x[masked[static_cast<std::size_t>(j)]];
  }
  std::vector<double> finite;
  for (double l : logs) {
    if (!is_neg_inf(l)) finite.push_back(l);
  }
  if (finite.empty()) throw DegenerateTarget("denoising posterior has no mass");
  DenoisingPosterior out;
  out.log_z = logsumexp(finite);
  out.posterior = DistTable::from_log_weights(std::move(support), logs);
  return out;
}

namespace {

template <typename F>
void for_union(const DistTable& p, const DistTable& q, F&& f) {
  std::size_t i = 0, j = 0;
  const auto& sp = p.support();
  const auto& sq = q.support();
  while (i < sp.size() || j < sq.size()) {
    if (j == sq.size() || (i < sp.size() && sp[i] < sq[j])) {
      f(p.probs()[i++], 0.0);
    } else if (i == sp.size() || sq[j] < sp[i]) {
      f(0.0, q.probs()[j++]);
    } else {
      f(p.probs()[i++], q.probs()[j++]);
    }
  }
}

}  // namespace

double tv_distance(const DistTable& p, const DistTable& q) {
  double total = 0.0;
  for_union(p, q, [&](double a, double b) { total += std::abs(a - b); });
  return std::min(1.0, 0.5 * total);
}

double kl_divergence(const DistTable& p, const DistTable& q) {
  double total = 0.0;
  for_union(p, q, [&](double a, double b) {
    if (a == 0.0) return;
    if (b == 0.0) throw DomainError("KL divergence is infinite: q has no mass where p does");
    total += a * std::log(a / b);
  });
  return std::max(0.0, total);
}

DistTable empirical_histogram(std::span<const Sequence> samples, const Binning& binning) {
  if (samples.empty()) throw InvalidInput("empirical_histogram needs at least one sample");
  std::map<Sequence, double> counts;
  for (const auto& x : samples) counts[binning ? binning(x) : x] += 1.0;
  std::vector<Sequence> support;
  std::vector<double> weights;
  for (auto& [x, c] : counts) {
    support.push_back(x);
    weights.push_back(c);
  }
  return DistTable::from_weights(std::move(support), std::move(weights));
}

DistTable coarse_grain(const DistTable& table, const Binning& binning) {
  if (!binning) return table;
  std::map<Sequence, double> mass;
  for (std::size_t i = 0; i < table.size(); ++i) mass[binning(table.support()[i])] += table.probs()[i];
  std::vector<Sequence> support;
  std::vector<double> weights;
  for (auto& [x, m] : mass) {
    support.push_back(x);
    weights.push_back(m);
  }
  return DistTable::from_weights(std::move(support), std::move(weights));
}

}  // namespace mdmsteer
