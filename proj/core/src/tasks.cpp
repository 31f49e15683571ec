#include "mdmsteer/tasks.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/numeric.hpp"

namespace mdmsteer {

// ---------------------------------------------------------------- grid

bool GridTask::in_square(int x, int y) const {
  auto inside = [&](int c) {
    if (c < offset) return false;
    const int rel = c - offset;
    return rel / period < squares_per_axis && rel % period < square_side;
  };
  return inside(x) && inside(y);
}

double GridTask::uniform_weight() const {
  // A uniform-grid component of weight w and a uniform-over-squares
  // component of weight 1 - w give outside/inside density ratio eps when
  // w / N = eps * (w / N + (1 - w) / A), N cells in total, A inside.
  const double cells = static_cast<double>(side) * side;
  const double inside = static_cast<double>(squares_per_axis * squares_per_axis) * square_side * square_side;
  const double r = inside / cells;
  return eps_prior / (r * (1.0 - eps_prior) + eps_prior);
}

Sequence GridTask::sample_prior(Rng& rng) const {
  if (uniform01(rng) < uniform_weight()) {
    std::uniform_int_distribution<int> cell(0, side - 1);
    const int x = cell(rng);
    const int y = cell(rng);
    return Sequence{x, y};
  }
  std::uniform_int_distribution<int> square(0, squares_per_axis - 1);
  std::uniform_int_distribution<int> within(0, square_side - 1);
  const int sx = square(rng);
  const int sy = square(rng);
  const int x = offset + sx * period + within(rng);
  const int y = offset + sy * period + within(rng);
  return Sequence{x, y};
}

DistTable GridTask::prior_table() const {
  std::vector<Sequence> support;
  std::vector<double> weights;
  support.reserve(static_cast<std::size_t>(side) * side);
  weights.reserve(static_cast<std::size_t>(side) * side);
  for (int x = 0; x < side; ++x) {
    for (int y = 0; y < side; ++y) {
      support.push_back(Sequence{x, y});
      weights.push_back(in_square(x, y) ? 1.0 : eps_prior);
    }
  }
  return DistTable::from_weights(std::move(support), std::move(weights));
}

Sequence grid_prior_sample(const GridTask& task, Rng& rng) { return task.sample_prior(rng); }

double GridReward::raw_log_reward(const Sequence& x0) const {
  if (x0.size() != 2) throw InvalidInput("grid reward expects two tokens");
  for (int i = 0; i < 2; ++i) {
    if (x0[i] < 0 || x0[i] >= task_.side) throw InvalidInput("grid reward: token outside the grid");
  }
  return task_.satisfies_reward(x0) ? 0.0 : kNegInf;
}

double GridReward::raw_relaxed(std::span<const double> rows, int length, int classes, std::span<double> grad) const {
  if (length != 2 || classes != task_.side) throw InvalidInput("grid relaxed reward expects 2 rows of side entries");
  for (int i = 0; i < 2; ++i) {
    double total = 0.0;
    for (int v = 0; v < classes; ++v) total += rows[static_cast<std::size_t>(i * classes + v)];
    if (std::abs(total - 1.0) > 1e-6) throw InvalidInput("grid relaxed reward: rows must sum to 1");
  }
  std::fill(grad.begin(), grad.end(), 0.0);
  double mass = 0.0;
  for (int v = task_.threshold; v < classes; ++v) mass += rows[static_cast<std::size_t>(v)];
  if (!(mass > 0.0)) return kNegInf;
  for (int v = task_.threshold; v < classes; ++v) grad[static_cast<std::size_t>(v)] = 1.0 / mass;
  return std::log(mass);
}

double grid_log_reward(const Sequence& x0, const GridTask& task) { return GridReward(task).log_reward(x0); }

// ---------------------------------------------------------------- datasets

TokenDataset load_dataset(const std::string& path, int vocab_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  const Vocabulary vocab(vocab_size);
  TokenDataset ds;
  ds.vocab_size = vocab_size;
  ds.source = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::vector<Token> tokens;
    std::string field;
    while (fields >> field) {
      std::size_t used = 0;
      long v = -1;
      try {
        v = std::stol(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size()) throw ParseError(path + ": bad token '" + field + "'", lineno);
      if (v < 0 || v >= vocab_size) {
        throw ParseError(path + ": token " + field + " outside vocabulary of size " + std::to_string(vocab_size),
                         lineno);
      }
      if (vocab.is_mask(static_cast<Token>(v))) throw ParseError(path + ": mask token in clean data", lineno);
      tokens.push_back(static_cast<Token>(v));
    }
    if (!ds.items.empty() && tokens.size() != static_cast<std::size_t>(ds.length())) {
      throw ParseError(path + ": sequence length " + std::to_string(tokens.size()) + " differs from " +
                           std::to_string(ds.length()),
                       lineno);
    }
    ds.items.emplace_back(std::move(tokens));
  }
  return ds;
}

void save_dataset(const TokenDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  out << "# d=" << ds.vocab_size << " count=" << ds.items.size() << '\n';
  for (const auto& s : ds.items) {
    for (int i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
  if (!out) throw IoError("failed writing dataset '" + path + "'");
}

std::unique_ptr<TableReward> load_reward_table(const std::string& path, double fallback, double inverse_temperature) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reward table '" + path + "'");
  std::map<Sequence, double> values;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || (lineno == 1 && line.rfind("sequence", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(path + ": expected 'sequence,log_reward'", lineno);
    std::vector<Token> tokens;
    std::istringstream ids(line.substr(0, comma));
    std::string part;
    try {
      while (std::getline(ids, part, '-')) tokens.push_back(std::stoi(part));
      values[Sequence(std::move(tokens))] = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError(path + ": malformed row", lineno);
    }
  }
  return std::make_unique<TableReward>(std::move(values), fallback, inverse_temperature);
}

// ---------------------------------------------------------------- tiny instances

std::unique_ptr<TabularDenoiser> make_constant_tabular(const Vocabulary& vocab, int length, int buckets,
                                                       const std::vector<double>& probs) {
  const int k = vocab.clean_size();
  if (probs.size() != static_cast<std::size_t>(length * k)) throw InvalidInput("constant tabular: probs must be n x (d-1)");
  auto model = std::make_unique<TabularDenoiser>(vocab, length, buckets);
  for (int i = 0; i < length; ++i) {
    std::span<const double> row(probs.data() + static_cast<std::size_t>(i * k), static_cast<std::size_t>(k));
    for (Token c = 0; c < vocab.size(); ++c) {
      for (int b = 0; b < buckets; ++b) model->set_probabilities(i, c, b, row);
    }
  }
  return model;
}

std::unique_ptr<TabularDenoiser> tilt_tabular(const TabularDenoiser& model, const AdditiveReward& reward) {
  const Vocabulary& vocab = model.vocab();
  const int k = model.classes();
  if (reward.length() != model.length() || reward.classes() != k) throw InvalidInput("tilt_tabular: shape mismatch");
  auto out = std::make_unique<TabularDenoiser>(model);
  const double beta = reward.inverse_temperature();
  for (int i = 0; i < model.length(); ++i) {
    for (Token c = 0; c < vocab.size(); ++c) {
      for (int b = 0; b < model.buckets(); ++b) {
        auto row = out->logits_row(i, c, b);
        for (int v = 0; v < k; ++v) row[static_cast<std::size_t>(v)] += beta * reward.weight(i, v);
      }
    }
  }
  return out;
}

DistTable mean_field_table(const Vocabulary& vocab, int length, const std::vector<double>& probs) {
  const int k = vocab.clean_size();
  auto support = enumerate_sequences(vocab.size(), length);
  std::vector<double> weights;
  weights.reserve(support.size());
  for (const auto& x : support) {
    double p = 1.0;
    for (int i = 0; i < length; ++i) p *= probs[static_cast<std::size_t>(i * k + x[i])];
    weights.push_back(p);
  }
  return DistTable::from_weights(std::move(support), std::move(weights));
}

// ---------------------------------------------------------------- two-class patterns

std::vector<Sequence> TwoClassTask::prototypes() const {
  Rng rng = make_stream(pattern_seed, "two-class-prototypes");
  std::vector<Token> a(static_cast<std::size_t>(length)), b(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    a[static_cast<std::size_t>(i)] = uniform01(rng) < 0.5 ? 1 : 0;
    // Prototypes disagree on roughly three quarters of the pixels.
    b[static_cast<std::size_t>(i)] = uniform01(rng) < 0.75 ? 1 - a[static_cast<std::size_t>(i)] : a[static_cast<std::size_t>(i)];
  }
  return {Sequence(std::move(a)), Sequence(std::move(b))};
}

Sequence TwoClassTask::sample_class(int label, Rng& rng) const {
  Sequence out = prototypes()[static_cast<std::size_t>(label)];
  for (int i = 0; i < length; ++i) {
    if (uniform01(rng) < flip) out[i] = 1 - out[i];
  }
  return out;
}

Sequence TwoClassTask::sample(Rng& rng, int* label) const {
  const int c = uniform01(rng) < 0.5 ? 0 : 1;
  if (label) *label = c;
  return sample_class(c, rng);
}

std::unique_ptr<LogisticReward> TwoClassTask::reward() const {
  const auto protos = prototypes();
  std::vector<double> weights(static_cast<std::size_t>(length) * 2, 0.0);
  for (int i = 0; i < length; ++i) {
    if (protos[0][i] == protos[1][i]) continue;
    weights[static_cast<std::size_t>(i * 2 + protos[1][i])] = scale;
    weights[static_cast<std::size_t>(i * 2 + protos[0][i])] = -scale;
  }
  return std::make_unique<LogisticReward>(length, 2, std::move(weights), 0.0, inverse_temperature);
}

}  // namespace mdmsteer
