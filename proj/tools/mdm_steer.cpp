#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mdmsteer/commands.hpp"
#include "mdmsteer/config.hpp"
#include "mdmsteer/errors.hpp"

using namespace mdmsteer;

int main(int argc, char** argv) {
  CLI::App app{"Masked diffusion training, reward fine-tuning and sampling"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  int best_of = 0;
  int particles = 0;
  std::vector<std::string> overrides;

  for (const char* name : {"pretrain", "finetune", "sample", "eval", "oracle-check"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration (key = value lines)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    sub->add_option("--set", overrides, "extra key=value override, repeatable");
    if (std::string(name) == "sample") {
      sub->add_option("--best-of", best_of, "keep the best of N base samples")->check(CLI::PositiveNumber);
      sub->add_option("--particles", particles, "reward-guided particle sampling with K candidates")
          ->check(CLI::PositiveNumber);
    }
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();

  try {
    RunConfig config = load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_config_value(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (sub->count("--seed")) config.seed = seed;
    if (sub->count("--out")) config.out_dir = out_dir;
    config.validate();

    CommandResult result;
    if (command == "pretrain") {
      result = cmd_pretrain(config);
    } else if (command == "finetune") {
      result = cmd_finetune(config);
    } else if (command == "sample") {
      result = cmd_sample(config, SampleRequest{best_of, particles});
    } else if (command == "eval") {
      result = cmd_eval(config);
    } else {
      result = cmd_oracle_check(config);
    }
    if (command != "oracle-check") {
      for (const auto& [key, value] : result.metrics) std::cout << key << " = " << value << "\n";
    }
    for (const auto& f : result.files) std::cout << "wrote " << f << "\n";
    return result.exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
