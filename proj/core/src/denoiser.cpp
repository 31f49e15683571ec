#include "mdmsteer/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

Denoiser::Denoiser(Vocabulary vocab, int length, std::size_t num_params)
    : vocab_(vocab), length_(length), params_(num_params, 0.0) {
  if (length < 1) throw InvalidInput("denoiser length must be >= 1");
}

ForwardPass Denoiser::forward(const MaskedSample& xt) const {
  if (xt.seq.size() != length_) {
    throw InvalidInput("denoiser expects length " + std::to_string(length_) + ", got " +
                       std::to_string(xt.seq.size()));
  }
  xt.seq.validate(vocab_);
  if (!(xt.t >= 0.0 && xt.t <= 1.0)) throw DomainError("denoiser time outside [0,1]");

  ForwardPass pass;
  pass.input = xt;
  DenoiserOutput& out = pass.out;
  out.length = length_;
  out.classes = classes();
  const std::size_t cells = static_cast<std::size_t>(length_) * static_cast<std::size_t>(classes());
  std::vector<double> logits(cells, 0.0);
  if (xt.seq.mask_count(vocab_) > 0) compute_logits(xt, logits, pass.cache);

  out.probs.assign(cells, 0.0);
  out.log_probs.assign(cells, kNegInf);
  const std::size_t k = static_cast<std::size_t>(classes());
  for (int i = 0; i < length_; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * k;
    const Token tok = xt.seq[i];
    if (!vocab_.is_mask(tok)) {
      // copy-through
      out.probs[off + static_cast<std::size_t>(tok)] = 1.0;
      out.log_probs[off + static_cast<std::size_t>(tok)] = 0.0;
      continue;
    }
    std::span<const double> z(logits.data() + off, k);
    std::span<double> lp(out.log_probs.data() + off, k);
    log_softmax(z, lp);
    for (std::size_t v = 0; v < k; ++v) out.probs[off + v] = std::exp(lp[v]);
  }
  return pass;
}

void Denoiser::backward(const ForwardPass& pass, std::span<const double> dlogits, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw InvalidInput("gradient buffer has wrong size");
  if (dlogits.size() != static_cast<std::size_t>(length_ * classes())) {
    throw InvalidInput("dlogits buffer has wrong size");
  }
  if (pass.cache.empty()) return;
  backprop(pass.input, pass.cache, dlogits, grad);
}

// ---------------------------------------------------------------- tabular

TabularDenoiser::TabularDenoiser(Vocabulary vocab, int length, int buckets)
    : Denoiser(vocab, length,
               static_cast<std::size_t>(length) * static_cast<std::size_t>(vocab.size()) *
                   static_cast<std::size_t>(buckets) * static_cast<std::size_t>(vocab.clean_size())),
      buckets_(buckets) {
  if (buckets < 1) throw InvalidInput("tabular denoiser needs at least one time bucket");
}

std::string TabularDenoiser::architecture() const {
  std::ostringstream out;
  out << "kind=tabular;d=" << vocab().size() << ";n=" << length() << ";buckets=" << buckets_;
  return out.str();
}

int TabularDenoiser::bucket(double t) const {
  const int b = static_cast<int>(std::ceil(t * buckets_ - 1e-9)) - 1;
  return std::clamp(b, 0, buckets_ - 1);
}

std::size_t TabularDenoiser::row_offset(int position, Token context, int bucket) const {
  const std::size_t d = static_cast<std::size_t>(vocab().size());
  const std::size_t k = static_cast<std::size_t>(classes());
  return ((static_cast<std::size_t>(position) * d + static_cast<std::size_t>(context)) *
              static_cast<std::size_t>(buckets_) +
          static_cast<std::size_t>(bucket)) *
         k;
}

std::span<double> TabularDenoiser::logits_row(int position, Token context, int bucket) {
  return params().subspan(row_offset(position, context, bucket), static_cast<std::size_t>(classes()));
}

void TabularDenoiser::set_probabilities(int position, Token context, int bucket, std::span<const double> probs) {
  auto row = logits_row(position, context, bucket);
  if (probs.size() != row.size()) throw InvalidInput("set_probabilities: row width mismatch");
  for (std::size_t v = 0; v < row.size(); ++v) {
    if (!(probs[v] > 0.0)) throw InvalidInput("set_probabilities: entries must be positive");
    row[v] = std::log(probs[v]);
  }
}

void TabularDenoiser::compute_logits(const MaskedSample& xt, std::span<double> logits,
                                     std::vector<double>& cache) const {
  const int n = length();
  const std::size_t k = static_cast<std::size_t>(classes());
  const int b = bucket(xt.t);
  cache.assign(static_cast<std::size_t>(n), -1.0);
  for (int i = 0; i < n; ++i) {
    if (!vocab().is_mask(xt.seq[i])) continue;
    const Token context = xt.seq[(i + 1) % n];
    const std::size_t off = row_offset(i, context, b);
    cache[static_cast<std::size_t>(i)] = static_cast<double>(off);
    std::copy_n(params().begin() + static_cast<std::ptrdiff_t>(off), k,
                logits.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * k));
  }
}

void TabularDenoiser::backprop(const MaskedSample& xt, const std::vector<double>& cache,
                               std::span<const double> dlogits, std::span<double> grad) const {
  const std::size_t k = static_cast<std::size_t>(classes());
  for (int i = 0; i < length(); ++i) {
    if (!vocab().is_mask(xt.seq[i])) continue;
    const std::size_t off = static_cast<std::size_t>(cache[static_cast<std::size_t>(i)]);
    for (std::size_t v = 0; v < k; ++v) grad[off + v] += dlogits[static_cast<std::size_t>(i) * k + v];
  }
}

// ---------------------------------------------------------------- mlp

MlpDenoiser::Layout MlpDenoiser::make_layout(const Vocabulary& vocab, int length, const MlpShape& shape) {
  if (shape.embed_dim < 1 || shape.hidden < 1) throw InvalidInput("MLP dimensions must be positive");
  Layout l{};
  const std::size_t d = static_cast<std::size_t>(vocab.size());
  const std::size_t e = static_cast<std::size_t>(shape.embed_dim);
  const std::size_t h = static_cast<std::size_t>(shape.hidden);
  const std::size_t k = static_cast<std::size_t>(vocab.clean_size());
  const std::size_t n = static_cast<std::size_t>(length);
  l.in_dim = static_cast<int>(n * e) + kTimeFeatures;
  std::size_t off = 0;
  l.emb = off;
  off += d * e;
  l.w1 = off;
  off += h * static_cast<std::size_t>(l.in_dim);
  l.b1 = off;
  off += h;
  l.w2 = off;
  off += h * h;
  l.b2 = off;
  off += h;
  l.pos = off;
  off += n * h;
  l.wo = off;
  off += k * h;
  l.bo = off;
  off += k;
  l.total = off;
  return l;
}

MlpDenoiser::MlpDenoiser(Vocabulary vocab, int length, MlpShape shape, std::uint64_t seed)
    : Denoiser(vocab, length, make_layout(vocab, length, shape).total),
      shape_(shape),
      layout_(make_layout(vocab, length, shape)) {
  Rng rng = make_stream(seed, "mlp-init");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto p = params();
  auto fill = [&](std::size_t off, std::size_t count, double scale) {
    for (std::size_t i = 0; i < count; ++i) p[off + i] = scale * normal(rng);
  };
  const std::size_t d = static_cast<std::size_t>(vocab.size());
  const std::size_t e = static_cast<std::size_t>(shape.embed_dim);
  const std::size_t h = static_cast<std::size_t>(shape.hidden);
  const std::size_t k = static_cast<std::size_t>(vocab.clean_size());
  fill(layout_.emb, d * e, 1.0);
  fill(layout_.w1, h * static_cast<std::size_t>(layout_.in_dim), 1.0 / std::sqrt(static_cast<double>(layout_.in_dim)));
  fill(layout_.w2, h * h, 1.0 / std::sqrt(static_cast<double>(h)));
  fill(layout_.pos, static_cast<std::size_t>(length) * h, 0.5);
  fill(layout_.wo, k * h, 0.1 / std::sqrt(static_cast<double>(h)));
}

std::string MlpDenoiser::architecture() const {
  std::ostringstream out;
  out << "kind=mlp;d=" << vocab().size() << ";n=" << length() << ";embed=" << shape_.embed_dim
      << ";hidden=" << shape_.hidden;
  return out.str();
}

// Cache layout: x[in_dim] | a1[H] | h1[H] | a2[n*H] | h2[n*H]
void MlpDenoiser::compute_logits(const MaskedSample& xt, std::span<double> logits,
                                 std::vector<double>& cache) const {
  const int n = length();
  const std::size_t e = static_cast<std::size_t>(shape_.embed_dim);
  const std::size_t h = static_cast<std::size_t>(shape_.hidden);
  const std::size_t k = static_cast<std::size_t>(classes());
  const std::size_t in = static_cast<std::size_t>(layout_.in_dim);
  const auto p = params();
  cache.assign(in + 2 * h + 2 * static_cast<std::size_t>(n) * h, 0.0);
  double* x = cache.data();
  double* a1 = x + in;
  double* h1 = a1 + h;
  double* a2 = h1 + h;
  double* h2 = a2 + static_cast<std::size_t>(n) * h;

  for (int i = 0; i < n; ++i) {
    const double* row = p.data() + layout_.emb + static_cast<std::size_t>(xt.seq[i]) * e;
    std::copy_n(row, e, x + static_cast<std::size_t>(i) * e);
  }
  time_features(xt.t, std::span<double>(x + static_cast<std::size_t>(n) * e, kTimeFeatures));

  for (std::size_t j = 0; j < h; ++j) {
    const double* w = p.data() + layout_.w1 + j * in;
    double acc = p[layout_.b1 + j];
    for (std::size_t c = 0; c < in; ++c) acc += w[c] * x[c];
    a1[j] = acc;
    h1[j] = gelu(acc);
  }
  std::vector<double> shared(h);
  for (std::size_t j = 0; j < h; ++j) {
    const double* w = p.data() + layout_.w2 + j * h;
    double acc = p[layout_.b2 + j];
    for (std::size_t c = 0; c < h; ++c) acc += w[c] * h1[c];
    shared[j] = acc;
  }
  for (int i = 0; i < n; ++i) {
    if (!vocab().is_mask(xt.seq[i])) continue;
    const std::size_t base = static_cast<std::size_t>(i) * h;
    const double* pos = p.data() + layout_.pos + base;
    for (std::size_t j = 0; j < h; ++j) {
      a2[base + j] = shared[j] + pos[j];
      h2[base + j] = gelu(a2[base + j]);
    }
    double* z = logits.data() + static_cast<std::size_t>(i) * k;
    for (std::size_t v = 0; v < k; ++v) {
      const double* w = p.data() + layout_.wo + v * h;
      double acc = p[layout_.bo + v];
      for (std::size_t c = 0; c < h; ++c) acc += w[c] * h2[base + c];
      z[v] = acc;
    }
  }
}

void MlpDenoiser::backprop(const MaskedSample& xt, const std::vector<double>& cache,
                           std::span<const double> dlogits, std::span<double> grad) const {
  const int n = length();
  const std::size_t e = static_cast<std::size_t>(shape_.embed_dim);
  const std::size_t h = static_cast<std::size_t>(shape_.hidden);
  const std::size_t k = static_cast<std::size_t>(classes());
  const std::size_t in = static_cast<std::size_t>(layout_.in_dim);
  const auto p = params();
  const double* x = cache.data();
  const double* a1 = x + in;
  const double* h1 = a1 + h;
  const double* a2 = h1 + h;
  const double* h2 = a2 + static_cast<std::size_t>(n) * h;

  std::vector<double> dshared(h, 0.0);
  std::vector<double> dh2(h);
  bool any = false;
  for (int i = 0; i < n; ++i) {
    if (!vocab().is_mask(xt.seq[i])) continue;
    const double* dz = dlogits.data() + static_cast<std::size_t>(i) * k;
    const std::size_t base = static_cast<std::size_t>(i) * h;
    std::fill(dh2.begin(), dh2.end(), 0.0);
    for (std::size_t v = 0; v < k; ++v) {
      const double g = dz[v];
      if (g == 0.0) continue;
      any = true;
      grad[layout_.bo + v] += g;
      double* gw = grad.data() + layout_.wo + v * h;
      const double* w = p.data() + layout_.wo + v * h;
      for (std::size_t c = 0; c < h; ++c) {
        gw[c] += g * h2[base + c];
        dh2[c] += g * w[c];
      }
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double da2 = dh2[j] * gelu_grad(a2[base + j]);
      grad[layout_.pos + base + j] += da2;
      dshared[j] += da2;
    }
  }
  if (!any) return;

  std::vector<double> dh1(h, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    const double g = dshared[j];
    grad[layout_.b2 + j] += g;
    double* gw = grad.data() + layout_.w2 + j * h;
    const double* w = p.data() + layout_.w2 + j * h;
    for (std::size_t c = 0; c < h; ++c) {
      gw[c] += g * h1[c];
      dh1[c] += g * w[c];
    }
  }
  std::vector<double> dx(in, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    const double g = dh1[j] * gelu_grad(a1[j]);
    grad[layout_.b1 + j] += g;
    double* gw = grad.data() + layout_.w1 + j * in;
    const double* w = p.data() + layout_.w1 + j * in;
    for (std::size_t c = 0; c < in; ++c) {
      gw[c] += g * x[c];
      dx[c] += g * w[c];
    }
  }
  for (int i = 0; i < n; ++i) {
    double* ge = grad.data() + layout_.emb + static_cast<std::size_t>(xt.seq[i]) * e;
    const double* src = dx.data() + static_cast<std::size_t>(i) * e;
    for (std::size_t c = 0; c < e; ++c) ge[c] += src[c];
  }
}

// ---------------------------------------------------------------- factory

std::unique_ptr<Denoiser> make_denoiser(const std::string& architecture, std::uint64_t seed) {
  std::map<std::string, std::string> fields;
  std::istringstream in(architecture);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidInput("malformed architecture descriptor: " + architecture);
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const std::string& key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw InvalidInput("architecture descriptor missing '" + key + "'");
    return std::stoi(it->second);
  };
  const std::string kind = fields.count("kind") ? fields["kind"] : "";
  if (kind == "tabular") {
    return std::make_unique<TabularDenoiser>(Vocabulary(get("d")), get("n"), get("buckets"));
  }
  if (kind == "mlp") {
    return std::make_unique<MlpDenoiser>(Vocabulary(get("d")), get("n"), MlpShape{get("embed"), get("hidden")},
                                         seed);
  }
  throw InvalidInput("unknown denoiser kind in descriptor: " + architecture);
}

// ---------------------------------------------------------------- reverse process

std::vector<double> reverse_transition_dist(const Vocabulary& vocab, const DenoiserOutput& mu,
                                            const MaskedSample& xt, double t_to, const NoiseSchedule& schedule) {
  if (!(t_to < xt.t)) throw DomainError("reverse_transition_dist: t_to must be < t");
  const int n = xt.seq.size();
  const std::size_t d = static_cast<std::size_t>(vocab.size());
  const double a_t = schedule.alpha(xt.t);
  const double a_s = schedule.alpha(t_to);
  const double denom = 1.0 - a_t;
  std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<std::size_t>(i) * d;
    const Token tok = xt.seq[i];
    if (!vocab.is_mask(tok)) {
      row[tok] = 1.0;
      continue;
    }
    const double stay = (1.0 - a_s) / denom;
    const double move = (a_s - a_t) / denom;
    const auto m = mu.row(i);
    for (int v = 0; v < vocab.clean_size(); ++v) row[v] = move * m[static_cast<std::size_t>(v)];
    row[vocab.mask_id()] = stay;
  }
  return out;
}

double endpoint_logprob(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& xt,
                        const Sequence& x0) {
  if (xt.seq.size() != x0.size() || mu.length != x0.size()) throw InvalidInput("endpoint_logprob: length mismatch");
  if (!x0.is_clean(vocab)) throw InvalidInput("endpoint_logprob: x0 must be clean");
  double total = 0.0;
  for (int i = 0; i < x0.size(); ++i) {
    const Token tok = xt.seq[i];
    if (!vocab.is_mask(tok)) {
      if (tok != x0[i]) return kNegInf;
      continue;
    }
    const double lp = mu.log_row(i)[static_cast<std::size_t>(x0[i])];
    if (is_neg_inf(lp)) return kNegInf;
    total += lp;
  }
  return total;
}

Sequence sample_endpoint(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& xt, Rng& rng) {
  Sequence out = xt.seq;
  for (int i = 0; i < out.size(); ++i) {
    if (!vocab.is_mask(out[i])) continue;
    out[i] = categorical_from_uniform(mu.row(i), uniform01(rng));
  }
  return out;
}

MaskedSample sample_transition(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& x,
                               double s, const NoiseSchedule& schedule, bool force_clean, Rng& rng) {
  if (!(s < x.t)) throw DomainError("sample_transition: target time must be < current time");
  const double a_t = schedule.alpha(x.t);
  const double a_s = schedule.alpha(s);
  const double stay = (1.0 - a_s) / (1.0 - a_t);
  MaskedSample out{x.seq, s};
  for (int i = 0; i < out.seq.size(); ++i) {
    if (!vocab.is_mask(out.seq[i])) continue;
    const bool stays = uniform01(rng) < stay;
    if (stays && !force_clean) continue;
    out.seq[i] = categorical_from_uniform(mu.row(i), uniform01(rng));
  }
  return out;
}

double transition_logprob(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& x_from,
                          const MaskedSample& x_to, const NoiseSchedule& schedule, bool force_clean) {
  if (x_from.seq.size() != x_to.seq.size()) throw InvalidInput("transition_logprob: length mismatch");
  if (!(x_to.t < x_from.t)) throw DomainError("transition_logprob: times must decrease");
  const double a_t = schedule.alpha(x_from.t);
  const double a_s = schedule.alpha(x_to.t);
  const double log_stay = safe_log((1.0 - a_s) / (1.0 - a_t));
  const double log_move = safe_log((a_s - a_t) / (1.0 - a_t));
  double total = 0.0;
  for (int i = 0; i < x_from.seq.size(); ++i) {
    const Token from = x_from.seq[i];
    const Token to = x_to.seq[i];
    if (!vocab.is_mask(from)) {
      if (from != to) return kNegInf;
      continue;
    }
    if (vocab.is_mask(to)) {
      if (force_clean || is_neg_inf(log_stay)) return kNegInf;
      total += log_stay;
      continue;
    }
    const double lp = mu.log_row(i)[static_cast<std::size_t>(to)];
    if (force_clean) {
      total += lp;
    } else {
      if (is_neg_inf(log_move)) return kNegInf;
      total += log_move + lp;
    }
  }
  return total;
}

void transition_logprob_dlogits(const Vocabulary& vocab, const DenoiserOutput& mu, const MaskedSample& x_from,
                                const MaskedSample& x_to, double weight, std::span<double> dlogits) {
  const std::size_t k = static_cast<std::size_t>(mu.classes);
  for (int i = 0; i < x_from.seq.size(); ++i) {
    if (!vocab.is_mask(x_from.seq[i]) || vocab.is_mask(x_to.seq[i])) continue;
    const auto m = mu.row(i);
    double* dz = dlogits.data() + static_cast<std::size_t>(i) * k;
    for (std::size_t v = 0; v < k; ++v) dz[v] -= weight * m[v];
    dz[static_cast<std::size_t>(x_to.seq[i])] += weight;
  }
}

Sequence ancestral_sample(const Denoiser& model, const TimeGrid& grid, const NoiseSchedule& schedule, Rng& rng,
                          CallCounter* counter, bool finetuned) {
  const Vocabulary& vocab = model.vocab();
  MaskedSample x{Sequence::all_masked(vocab, model.length()), 1.0};
  for (int i = grid.steps(); i >= 1; --i) {
    x.t = grid.time(i);
    const DenoiserOutput mu = model.predict_mean(x);
    count_model(counter, finetuned);
    x = sample_transition(vocab, mu, x, grid.time(i - 1), schedule, i == 1, rng);
  }
  return x.seq;
}

}  // namespace mdmsteer
