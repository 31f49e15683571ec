#include "mdmsteer/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "mdmsteer/errors.hpp"
#include "mdmsteer/grad_estimator.hpp"
#include "mdmsteer/trainer.hpp"

namespace mdmsteer {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
}

long long parse_int(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

Field text(std::string key, std::string RunConfig::*m) {
  return {key, [m](const RunConfig& c) { return c.*m; }, [m](RunConfig& c, const std::string& v) { c.*m = v; }};
}

Field integer(std::string key, int RunConfig::*m) {
  return {key, [m](const RunConfig& c) { return std::to_string(c.*m); },
          [m, key](RunConfig& c, const std::string& v) { c.*m = static_cast<int>(parse_int(key, v)); }};
}

Field real(std::string key, double RunConfig::*m) {
  return {key, [m](const RunConfig& c) { return format_double(c.*m); },
          [m, key](RunConfig& c, const std::string& v) { c.*m = parse_double(key, v); }};
}

Field list(std::string key, std::vector<double> RunConfig::*m) {
  return {key,
          [m](const RunConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < (c.*m).size(); ++i) out += (i ? "," : "") + format_double((c.*m)[i]);
            return out;
          },
          [m, key](RunConfig& c, const std::string& v) {
            std::vector<double> values;
            std::istringstream in(v);
            std::string item;
            while (std::getline(in, item, ',')) values.push_back(parse_double(key, trim(item)));
            c.*m = std::move(values);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      text("task", &RunConfig::task),
      text("schedule", &RunConfig::schedule),
      real("sigma_min", &RunConfig::sigma_min),
      real("sigma_max", &RunConfig::sigma_max),
      text("model", &RunConfig::model),
      integer("embed_dim", &RunConfig::embed_dim),
      integer("hidden", &RunConfig::hidden),
      integer("buckets", &RunConfig::buckets),
      text("method", &RunConfig::method),
      integer("M", &RunConfig::M),
      integer("K", &RunConfig::K),
      real("gamma", &RunConfig::gamma),
      integer("subtraj_inner_draws", &RunConfig::subtraj_inner_draws),
      integer("n_particles", &RunConfig::n_particles),
      integer("best_of", &RunConfig::best_of),
      text("guidance", &RunConfig::guidance),
      integer("warmup_steps", &RunConfig::warmup_steps),
      real("detach_fraction", &RunConfig::detach_fraction),
      text("estimator", &RunConfig::estimator),
      real("reinmax_tau", &RunConfig::reinmax_tau),
      real("lr_pretrain", &RunConfig::lr_pretrain),
      real("lr_model", &RunConfig::lr_model),
      real("lr_head", &RunConfig::lr_head),
      real("grad_clip", &RunConfig::grad_clip),
      real("ema_decay", &RunConfig::ema_decay),
      integer("batch_size", &RunConfig::batch_size),
      integer("finetune_batch", &RunConfig::finetune_batch),
      integer("head_embed", &RunConfig::head_embed),
      integer("head_hidden", &RunConfig::head_hidden),
      integer("buffer_capacity", &RunConfig::buffer_capacity),
      integer("on_policy_every", &RunConfig::on_policy_every),
      integer("data_every", &RunConfig::data_every),
      integer("refill_size", &RunConfig::refill_size),
      integer("train_steps", &RunConfig::train_steps),
      integer("inference_steps", &RunConfig::inference_steps),
      integer("pretrain_steps", &RunConfig::pretrain_steps),
      integer("finetune_steps", &RunConfig::finetune_steps),
      integer("log_every", &RunConfig::log_every),
      integer("eval_samples", &RunConfig::eval_samples),
      integer("elbo_draws", &RunConfig::elbo_draws),
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) {
         try {
           std::size_t used = 0;
           c.seed = std::stoull(v, &used);
           if (used == v.size() && v[0] != '-') return;
         } catch (const std::exception&) {
         }
         throw ConfigError("'seed' expects an unsigned 64-bit integer, got '" + v + "'");
       }},
      text("out_dir", &RunConfig::out_dir),
      text("pre_checkpoint", &RunConfig::pre_checkpoint),
      text("checkpoint", &RunConfig::checkpoint),
      real("reward_beta", &RunConfig::reward_beta),
      integer("tiny_vocab", &RunConfig::tiny_vocab),
      integer("tiny_length", &RunConfig::tiny_length),
      list("tiny_pre_probs", &RunConfig::tiny_pre_probs),
      list("tiny_reward_weights", &RunConfig::tiny_reward_weights),
      integer("twoclass_length", &RunConfig::twoclass_length),
      real("twoclass_flip", &RunConfig::twoclass_flip),
      real("twoclass_scale", &RunConfig::twoclass_scale),
      text("data_path", &RunConfig::data_path),
      text("reward_path", &RunConfig::reward_path),
      real("reward_fallback", &RunConfig::reward_fallback),
      integer("vocab_size", &RunConfig::vocab_size),
      real("inject_logz_bias", &RunConfig::inject_logz_bias),
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  auto positive = [](const char* key, long long v) {
    if (v < 1) throw ConfigError(std::string("'") + key + "' must be positive");
  };
  if (task != "grid" && task != "tiny" && task != "twoclass" && task != "dataset") {
    throw ConfigError("unknown task '" + task + "'");
  }
  if (schedule != "linear" && schedule != "log-linear") throw ConfigError("unknown schedule '" + schedule + "'");
  if (schedule == "log-linear" && !(sigma_min > 0.0 && sigma_max > sigma_min)) {
    throw ConfigError("log-linear schedule needs 0 < sigma_min < sigma_max");
  }
  if (model != "mlp" && model != "tabular") throw ConfigError("unknown model '" + model + "'");
  const Method m = method_from_string(method);
  grad_estimator_from_string(estimator);
  if (guidance != "argmax" && guidance != "softmax") throw ConfigError("unknown guidance rule '" + guidance + "'");
  positive("embed_dim", embed_dim);
  positive("hidden", hidden);
  positive("buckets", buckets);
  positive("M", M);
  positive("K", K);
  if (subtraj_inner_draws < 0) throw ConfigError("subtraj_inner_draws must be >= 0 (0 sums the whole path)");
  positive("n_particles", n_particles);
  positive("best_of", best_of);
  positive("batch_size", batch_size);
  positive("finetune_batch", finetune_batch);
  positive("head_embed", head_embed);
  positive("head_hidden", head_hidden);
  positive("buffer_capacity", buffer_capacity);
  positive("on_policy_every", on_policy_every);
  positive("data_every", data_every);
  positive("refill_size", refill_size);
  positive("train_steps", train_steps);
  positive("inference_steps", inference_steps);
  positive("log_every", log_every);
  positive("eval_samples", eval_samples);
  positive("elbo_draws", elbo_draws);
  if (pretrain_steps < 0 || finetune_steps < 0 || warmup_steps < 0) throw ConfigError("step budgets must be >= 0");
  if (!(detach_fraction >= 0.0 && detach_fraction < 1.0)) throw ConfigError("'detach_fraction' must be in [0,1)");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("'gamma' must be in [0,1]");
  if (m == Method::kDdppSubtraj) {
    const double g = gamma > 0.0 ? gamma : 1.0 / train_steps;
    if (std::abs(1.0 / g - std::round(1.0 / g)) > 1e-6) throw ConfigError("ddpp-subtraj needs gamma = 1 / integer");
  }
  if (!(lr_pretrain > 0.0 && lr_model > 0.0 && lr_head > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(reward_beta > 0.0)) throw ConfigError("'reward_beta' must be positive");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("'ema_decay' must be in [0,1)");
  if (task == "tiny") {
    if (tiny_vocab < 2 || tiny_length < 1) throw ConfigError("tiny task needs tiny_vocab >= 2 and tiny_length >= 1");
    const std::size_t cells = static_cast<std::size_t>(tiny_length) * static_cast<std::size_t>(tiny_vocab - 1);
    if (tiny_pre_probs.size() != cells || tiny_reward_weights.size() != cells) {
      throw ConfigError("tiny_pre_probs and tiny_reward_weights need tiny_length x (tiny_vocab - 1) entries");
    }
  }
  if (task == "dataset") {
    if (data_path.empty()) throw ConfigError("dataset task needs 'data_path'");
    if (vocab_size < 2) throw ConfigError("dataset task needs 'vocab_size' >= 2");
  }
}

RunConfig parse_config(std::istream& in) {
  RunConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    try {
      set_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return config;
}

RunConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  return parse_config(in);
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  find_field(key).set(config, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace mdmsteer
