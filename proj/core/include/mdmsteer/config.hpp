#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mdmsteer {

// Flat run configuration. Text form: one "key = value" per line, '#'
// comments, unknown keys rejected. Lists are comma-separated.
struct RunConfig {
  // task: grid | tiny | twoclass | dataset
  std::string task = "grid";
  std::string schedule = "linear";  // linear | log-linear
  double sigma_min = 1e-4;
  double sigma_max = 20.0;

  std::string model = "mlp";  // mlp | tabular
  int embed_dim = 64;
  int hidden = 256;
  int buckets = 8;

  std::string method = "ddpp-lb";
  int M = 16;
  int K = 8;
  double gamma = 0.0;  // 0 selects 1 / train_steps
  int subtraj_inner_draws = 1;  // 0: every lattice step of one bridged path
  int n_particles = 10;
  int best_of = 1;
  std::string guidance = "argmax";  // argmax | softmax
  int warmup_steps = 0;
  double detach_fraction = 0.3;
  std::string estimator = "straight-through";
  double reinmax_tau = 1.0;

  double lr_pretrain = 3e-4;
  double lr_model = 4e-3;
  double lr_head = 4e-3;
  double grad_clip = 0.0;
  double ema_decay = 0.0;
  int batch_size = 64;
  int finetune_batch = 16;
  int head_embed = 16;
  int head_hidden = 64;

  int buffer_capacity = 10000;
  int on_policy_every = 100;
  int data_every = 250;
  int refill_size = 64;

  int train_steps = 32;
  int inference_steps = 128;
  int pretrain_steps = 2000;
  int finetune_steps = 1000;
  int log_every = 50;
  int eval_samples = 10000;
  int elbo_draws = 16;

  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  std::string pre_checkpoint;
  std::string checkpoint;

  double reward_beta = 1.0;

  // task = tiny
  int tiny_vocab = 3;
  int tiny_length = 1;
  std::vector<double> tiny_pre_probs{0.7, 0.3};
  std::vector<double> tiny_reward_weights{0.0, 1.0986122886681098};

  // task = twoclass
  int twoclass_length = 16;
  double twoclass_flip = 0.1;
  double twoclass_scale = 1.0;

  // task = dataset
  std::string data_path;
  std::string reward_path;
  double reward_fallback = -30.0;
  int vocab_size = 0;

  // Fault injection for the oracle check: added to every log Z estimate.
  double inject_logz_bias = 0.0;

  // Throws ConfigError on the first violated rule.
  void validate() const;
};

RunConfig parse_config(std::istream& in);
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
// Every key in a fixed order; doubles printed with 17 significant digits.
std::string serialize_config(const RunConfig& config);
// Applies one "key=value" override.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace mdmsteer
