#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mdmsteer/checkpoint.hpp"
#include "mdmsteer/config.hpp"
#include "mdmsteer/denoiser.hpp"
#include "mdmsteer/oracle.hpp"
#include "mdmsteer/reward.hpp"
#include "mdmsteer/tasks.hpp"
#include "mdmsteer/trainer.hpp"

namespace mdmsteer {

// Everything a command needs to know about the configured task.
struct TaskContext {
  Vocabulary vocab{2};
  int length = 1;
  DataSource data;
  std::unique_ptr<RewardModel> reward;
  std::optional<GridTask> grid;
  // Exact law of the training data when it is enumerable (tiny task).
  std::optional<DistTable> data_table;
  // Sequences the ELBO-based BPD is measured on.
  std::vector<Sequence> heldout;
};

TaskContext make_task(const RunConfig& config);
std::unique_ptr<Denoiser> make_model(const RunConfig& config, const TaskContext& task);
NoiseSchedule make_schedule(const RunConfig& config);
FinetuneOptions finetune_options(const RunConfig& config);

struct CommandResult {
  int exit_code = 0;
  std::map<std::string, double> metrics;
  std::vector<std::string> files;
};

// Writes <out>/pretrain.ckpt, metrics.csv (step,loss), timing.csv and
// summary.json.
CommandResult cmd_pretrain(const RunConfig& config);
// Needs config.pre_checkpoint. Writes <out>/finetune.ckpt, metrics.csv,
// timing.csv and summary.json.
CommandResult cmd_finetune(const RunConfig& config);

struct SampleRequest {
  int best_of = 0;    // 0: not requested
  int particles = 0;  // 0: not requested
};
// Needs config.checkpoint. Writes <out>/samples.txt in dataset format and
// summary.json. Requesting both modes is a ConfigError.
CommandResult cmd_sample(const RunConfig& config, SampleRequest request = {});
// Needs config.checkpoint. Writes <out>/eval.json and, for the grid task,
// heatmap.pgm.
CommandResult cmd_eval(const RunConfig& config);
// Needs task = tiny. Writes <out>/oracle_check.json; exit code 1 on any
// failed check.
CommandResult cmd_oracle_check(const RunConfig& config);

struct Histogram2D {
  int width = 0;
  int height = 0;
  std::vector<double> counts;  // row-major, height x width

  double& at(int row, int col) { return counts[static_cast<std::size_t>(row) * width + col]; }
};

// Binary PGM "P5", 8-bit, counts scaled so the maximum maps to 255.
void write_heatmap(const Histogram2D& hist, const std::string& path);
// Grid samples binned per cell: row = token 1, column = token 0.
Histogram2D grid_histogram(const GridTask& task, const std::vector<Sequence>& samples);

// Rejection sampling from the prior restricted to the reward half-plane.
std::vector<Sequence> grid_target_reference(const GridTask& task, int count, Rng& rng);

// Mean over sequences of the per-token ELBO negative log-likelihood in bits,
// each sequence estimated with draws Monte-Carlo masking draws.
double elbo_bpd(const Denoiser& model, const NoiseSchedule& schedule, const std::vector<Sequence>& data, int draws,
                Rng& rng);

}  // namespace mdmsteer
