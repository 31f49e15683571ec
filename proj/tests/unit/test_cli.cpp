#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "mdmsteer/checkpoint.hpp"
#include "mdmsteer/commands.hpp"
#include "mdmsteer/config.hpp"
#include "mdmsteer/errors.hpp"

using namespace mdmsteer;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mdmsteer_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

int columns(const std::string& line) { return 1 + static_cast<int>(std::count(line.begin(), line.end(), ',')); }

RunConfig tiny_config(const fs::path& out) {
  RunConfig c = parse_config_text(
      "task = tiny\n"
      "model = tabular\n"
      "buckets = 4\n"
      "train_steps = 4\n"
      "inference_steps = 4\n"
      "pretrain_steps = 300\n"
      "finetune_steps = 40\n"
      "lr_pretrain = 0.05\n"
      "lr_model = 0.01\n"
      "lr_head = 0.01\n"
      "batch_size = 16\n"
      "finetune_batch = 8\n"
      "eval_samples = 200\n"
      "elbo_draws = 2\n"
      "log_every = 1000\n");
  c.out_dir = out.string();
  c.validate();
  return c;
}

}  // namespace

TEST(Config, RoundTripsEveryKey) {
  RunConfig c;
  c.method = "ddpp-kl";
  c.seed = 18446744073709551615ull;
  c.lr_model = 1.0 / 3.0;
  c.tiny_pre_probs = {0.25, 0.75};
  c.out_dir = "runs/x y";
  const RunConfig back = parse_config_text(serialize_config(c));
  EXPECT_EQ(serialize_config(back), serialize_config(c));
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.lr_model, c.lr_model);
  EXPECT_EQ(back.out_dir, "runs/x y");
  const std::string text = serialize_config(c);
  EXPECT_EQ(config_keys().size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST(Config, CommentsAndErrors) {
  const RunConfig c = parse_config_text("# comment\n\nM = 32   # trailing\n  method=ddpp-is\n");
  EXPECT_EQ(c.M, 32);
  EXPECT_EQ(c.method, "ddpp-is");
  try {
    parse_config_text("M = 4\nbogus = 1\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find('2'), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("M = four\n"), ParseError);
  EXPECT_THROW(parse_config_text("M 4\n"), ParseError);
  EXPECT_THROW(load_config("/nonexistent/config.cfg"), IoError);
}

TEST(Config, Validation) {
  auto bad = [](const std::string& key, const std::string& value) {
    RunConfig c;
    set_config_value(c, key, value);
    return c;
  };
  EXPECT_NO_THROW(RunConfig{}.validate());
  EXPECT_THROW(bad("method", "ppo").validate(), ConfigError);
  EXPECT_THROW(bad("task", "mnist").validate(), ConfigError);
  EXPECT_THROW(bad("M", "0").validate(), ConfigError);
  EXPECT_THROW(bad("lr_model", "0").validate(), ConfigError);
  EXPECT_THROW(bad("detach_fraction", "1").validate(), ConfigError);
  EXPECT_THROW(bad("reward_beta", "-1").validate(), ConfigError);
  RunConfig sub;
  sub.method = "ddpp-subtraj";
  sub.gamma = 0.3;
  EXPECT_THROW(sub.validate(), ConfigError);
  sub.gamma = 0.25;
  EXPECT_NO_THROW(sub.validate());
  RunConfig tiny;
  tiny.task = "tiny";
  tiny.tiny_pre_probs = {0.5};
  EXPECT_THROW(tiny.validate(), ConfigError);
  RunConfig ds;
  ds.task = "dataset";
  EXPECT_THROW(ds.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  Checkpoint c;
  c.stage = "ddpp-lb";
  c.config_text = serialize_config(RunConfig{});
  c.schedule = "linear";
  c.architecture = TabularDenoiser(Vocabulary(3), 2, 4).architecture();
  c.params = {0.5, -1.25, 1e-300, std::nextafter(1.0, 2.0)};
  c.steps = 12;
  c.adam_step = 12;
  c.adam_m = {1, 2};
  c.log_z_scalar = -3.5;
  const auto bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.stage, c.stage);
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.adam_m, c.adam_m);
  EXPECT_EQ(back.log_z_scalar, c.log_z_scalar);
  EXPECT_EQ(encode_checkpoint(back), bytes);

  auto flipped = bytes;
  flipped[20] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped), ParseError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), ParseError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), ParseError);

  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint((dir / "sub" / "a.ckpt").string(), c);
  EXPECT_EQ(encode_checkpoint(load_checkpoint((dir / "sub" / "a.ckpt").string())), bytes);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), IoError);
}

TEST(Heatmap, UniformAndSingleCell) {
  const fs::path dir = scratch_dir("heatmap");
  Histogram2D h{3, 2, std::vector<double>(6, 4.0)};
  write_heatmap(h, (dir / "u.pgm").string());
  EXPECT_EQ(slurp(dir / "u.pgm"), std::string("P5\n3 2\n255\n") + std::string(6, '\xff'));

  Histogram2D one{2, 2, std::vector<double>(4, 0.0)};
  one.at(1, 0) = 3.0;
  write_heatmap(one, (dir / "one.pgm").string());
  EXPECT_EQ(slurp(dir / "one.pgm"), std::string("P5\n2 2\n255\n") + std::string("\0\0\xff\0", 4));

  Histogram2D zero{2, 1, std::vector<double>(2, 0.0)};
  write_heatmap(zero, (dir / "zero.pgm").string());
  EXPECT_EQ(slurp(dir / "zero.pgm"), std::string("P5\n2 1\n255\n") + std::string(2, '\0'));
}

TEST(Heatmap, GridHistogramOrientation) {
  GridTask task;
  const Histogram2D h = grid_histogram(task, {Sequence{5, 100}, Sequence{5, 100}, Sequence{0, 1}});
  EXPECT_EQ(h.width, 128);
  EXPECT_EQ(h.height, 128);
  Histogram2D copy = h;
  EXPECT_EQ(copy.at(100, 5), 2.0);
  EXPECT_EQ(copy.at(1, 0), 1.0);
}

TEST(Commands, PretrainLearnsPointMassDeterministically) {
  const fs::path data = scratch_dir("pm") / "data.txt";
  std::ofstream(data) << "1 0\n1 0\n";
  RunConfig c = parse_config_text(
      "task = dataset\nvocab_size = 3\nmodel = tabular\nbuckets = 4\npretrain_steps = 1500\nlr_pretrain = 0.2\n"
      "batch_size = 16\nlog_every = 100000\n");
  c.data_path = data.string();
  c.out_dir = (data.parent_path() / "a").string();
  c.validate();
  const CommandResult a = cmd_pretrain(c);
  EXPECT_EQ(a.exit_code, 0);
  const auto rows = lines_of(data.parent_path() / "a" / "metrics.csv");
  ASSERT_EQ(rows.size(), 1501u);
  EXPECT_EQ(rows.front(), "step,loss");
  EXPECT_LE(std::stod(rows.back().substr(rows.back().find(',') + 1)), 1e-3);
  EXPECT_TRUE(fs::exists(data.parent_path() / "a" / "pretrain.ckpt"));
  EXPECT_TRUE(fs::exists(data.parent_path() / "a" / "timing.csv"));

  c.out_dir = (data.parent_path() / "b").string();
  cmd_pretrain(c);
  EXPECT_EQ(slurp(data.parent_path() / "a" / "metrics.csv"), slurp(data.parent_path() / "b" / "metrics.csv"));
  // The embedded config differs in out_dir only.
  EXPECT_EQ(load_checkpoint((data.parent_path() / "a" / "pretrain.ckpt").string()).params,
            load_checkpoint((data.parent_path() / "b" / "pretrain.ckpt").string()).params);
}

TEST(Commands, FinetuneSampleEvalPipeline) {
  const fs::path dir = scratch_dir("pipeline");
  RunConfig c = tiny_config(dir / "pre");
  cmd_pretrain(c);

  c.pre_checkpoint = (dir / "pre" / "pretrain.ckpt").string();
  c.out_dir = (dir / "ft").string();
  const CommandResult ft = cmd_finetune(c);
  EXPECT_EQ(ft.exit_code, 0);
  const auto rows = lines_of(dir / "ft" / "metrics.csv");
  ASSERT_EQ(rows.size(), 41u);
  for (const auto& row : rows) EXPECT_EQ(columns(row), 10) << row;
  const Checkpoint ck = load_checkpoint((dir / "ft" / "finetune.ckpt").string());
  EXPECT_EQ(ck.stage, "ddpp-lb");
  EXPECT_FALSE(ck.head_params.empty());

  c.checkpoint = (dir / "ft" / "finetune.ckpt").string();
  c.out_dir = (dir / "samples").string();
  const CommandResult s = cmd_sample(c);
  const TokenDataset samples = load_dataset((dir / "samples" / "samples.txt").string(), 3);
  EXPECT_EQ(samples.items.size(), static_cast<std::size_t>(c.eval_samples));
  EXPECT_EQ(s.metrics.at("count"), c.eval_samples);
  EXPECT_THROW(cmd_sample(c, {4, 4}), ConfigError);
  c.out_dir = (dir / "bon").string();
  EXPECT_EQ(cmd_sample(c, {4, 0}).exit_code, 0);

  c.out_dir = (dir / "eval").string();
  const CommandResult e = cmd_eval(c);
  std::ifstream in(dir / "eval" / "eval.json");
  const auto json = nlohmann::json::parse(in);
  EXPECT_TRUE(json.contains("mean_log_reward"));
  EXPECT_TRUE(json.contains("bpd"));
  EXPECT_TRUE(json.contains("exact_tv"));
  EXPECT_LE(e.metrics.at("exact_tv"), 1.0);
}

TEST(Commands, WarmupLeavesModelUnchanged) {
  const fs::path dir = scratch_dir("warmup");
  RunConfig c = tiny_config(dir / "pre");
  cmd_pretrain(c);
  c.pre_checkpoint = (dir / "pre" / "pretrain.ckpt").string();
  c.warmup_steps = 100;
  c.finetune_steps = 20;
  c.out_dir = (dir / "ft").string();
  cmd_finetune(c);
  const Checkpoint pre = load_checkpoint(c.pre_checkpoint);
  const Checkpoint ft = load_checkpoint((dir / "ft" / "finetune.ckpt").string());
  EXPECT_EQ(pre.params, ft.params);
  EXPECT_FALSE(ft.head_params.empty());
}

TEST(Commands, KlNeedsRelaxedReward) {
  const fs::path dir = scratch_dir("kl");
  std::ofstream(dir / "data.txt") << "0 1\n1 0\n";
  std::ofstream(dir / "rewards.csv") << "sequence,log_reward\n0-1,0\n";
  RunConfig c = parse_config_text("task = dataset\nvocab_size = 3\nmodel = tabular\npretrain_steps = 5\n");
  c.data_path = (dir / "data.txt").string();
  c.reward_path = (dir / "rewards.csv").string();
  c.out_dir = (dir / "pre").string();
  cmd_pretrain(c);
  c.pre_checkpoint = (dir / "pre" / "pretrain.ckpt").string();
  c.method = "ddpp-kl";
  c.out_dir = (dir / "ft").string();
  EXPECT_THROW(cmd_finetune(c), ConfigError);
}

TEST(Commands, OracleCheckPassesAndCatchesBias) {
  const fs::path dir = scratch_dir("oracle");
  RunConfig c = tiny_config(dir / "ok");
  testing::internal::CaptureStdout();
  const CommandResult ok = cmd_oracle_check(c);
  c.inject_logz_bias = 1.0;
  c.out_dir = (dir / "bad").string();
  const CommandResult bad = cmd_oracle_check(c);
  const std::string printed = testing::internal::GetCapturedStdout();
  EXPECT_EQ(ok.exit_code, 0);
  EXPECT_EQ(bad.exit_code, 1);
  EXPECT_NE(printed.find("FAIL batch_logz_argmin"), std::string::npos);
  std::ifstream in(dir / "ok" / "oracle_check.json");
  EXPECT_FALSE(nlohmann::json::parse(in).empty());

  RunConfig grid;
  EXPECT_THROW(cmd_oracle_check(grid), ConfigError);
}
