#include "mdmsteer/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "mdmsteer/baselines.hpp"
#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/objectives.hpp"

namespace mdmsteer {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kHeldoutSize = 1000;
constexpr int kReferenceSize = 50000;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path prepare_out(const RunConfig& c) {
  const fs::path out(c.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  return f;
}

void write_json(const fs::path& path, const Json& j) {
  auto f = open_out(path);
  f << j.dump(2) << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void check_compatible(const Denoiser& model, const TaskContext& task, const std::string& path) {
  if (model.vocab() != task.vocab || model.length() != task.length) {
    throw ConfigError("checkpoint '" + path + "' has vocabulary " + std::to_string(model.vocab().size()) +
                      " and length " + std::to_string(model.length()) + "; the task needs " +
                      std::to_string(task.vocab.size()) + " and " + std::to_string(task.length));
  }
}

Checkpoint require_checkpoint(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string("this command needs '") + key + "'");
  return load_checkpoint(path);
}

}  // namespace

NoiseSchedule make_schedule(const RunConfig& c) {
  if (c.schedule == "linear") return NoiseSchedule::linear();
  return NoiseSchedule::log_linear(c.sigma_min, c.sigma_max);
}

TaskContext make_task(const RunConfig& c) {
  c.validate();
  TaskContext t;
  Rng held = make_stream(c.seed, "heldout");
  if (c.task == "grid") {
    const GridTask g;
    t.vocab = g.vocab();
    t.length = g.length();
    t.data = [g](Rng& rng) { return g.sample_prior(rng); };
    t.reward = std::make_unique<GridReward>(g, c.reward_beta);
    t.grid = g;
    t.heldout = grid_target_reference(g, kHeldoutSize, held);
  } else if (c.task == "tiny") {
    t.vocab = Vocabulary(c.tiny_vocab);
    t.length = c.tiny_length;
    DistTable table = mean_field_table(t.vocab, t.length, c.tiny_pre_probs);
    t.data = [table](Rng& rng) { return table.sample(rng); };
    t.reward = std::make_unique<AdditiveReward>(t.length, t.vocab.clean_size(), c.tiny_reward_weights,
                                                c.reward_beta);
    const DistTable target = exact_target(table, *t.reward);
    for (int k = 0; k < kHeldoutSize; ++k) t.heldout.push_back(target.sample(held));
    t.data_table = std::move(table);
  } else if (c.task == "twoclass") {
    TwoClassTask tc;
    tc.length = c.twoclass_length;
    tc.flip = c.twoclass_flip;
    tc.scale = c.twoclass_scale;
    tc.inverse_temperature = c.reward_beta;
    t.vocab = tc.vocab();
    t.length = tc.length;
    t.data = [tc](Rng& rng) { return tc.sample(rng); };
    t.reward = tc.reward();
    for (int k = 0; k < kHeldoutSize; ++k) t.heldout.push_back(tc.sample_class(1, held));
  } else {
    auto ds = std::make_shared<TokenDataset>(load_dataset(c.data_path, c.vocab_size));
    if (ds->items.empty()) throw ConfigError("dataset '" + c.data_path + "' is empty");
    t.vocab = Vocabulary(c.vocab_size);
    t.length = ds->length();
    t.data = [ds](Rng& rng) {
      std::uniform_int_distribution<std::size_t> pick(0, ds->items.size() - 1);
      return ds->items[pick(rng)];
    };
    if (c.reward_path.empty()) {
      t.reward = std::make_unique<ConstantReward>(0.0, c.reward_beta);
    } else {
      t.reward = load_reward_table(c.reward_path, c.reward_fallback, c.reward_beta);
    }
    const std::size_t n = std::min<std::size_t>(ds->items.size(), kHeldoutSize);
    t.heldout.assign(ds->items.begin(), ds->items.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return t;
}

std::unique_ptr<Denoiser> make_model(const RunConfig& c, const TaskContext& task) {
  if (c.model == "tabular") return std::make_unique<TabularDenoiser>(task.vocab, task.length, c.buckets);
  return std::make_unique<MlpDenoiser>(task.vocab, task.length, MlpShape{c.embed_dim, c.hidden}, c.seed);
}

FinetuneOptions finetune_options(const RunConfig& c) {
  FinetuneOptions o;
  o.method = method_from_string(c.method);
  o.batch = c.finetune_batch;
  o.M = c.M;
  o.K = c.K;
  o.gamma = c.gamma;
  o.subtraj_inner_draws = c.subtraj_inner_draws;
  o.warmup_steps = c.warmup_steps;
  o.lr_model = c.lr_model;
  o.lr_head = c.lr_head;
  o.grad_clip = c.grad_clip;
  o.buffer_capacity = c.buffer_capacity;
  o.on_policy_every = c.on_policy_every;
  o.data_every = c.data_every;
  o.refill_size = c.refill_size;
  o.detach_fraction = c.detach_fraction;
  o.estimator = grad_estimator_from_string(c.estimator);
  o.reinmax_tau = c.reinmax_tau;
  o.train_steps = c.train_steps;
  o.head_embed = c.head_embed;
  o.head_hidden = c.head_hidden;
  return o;
}

std::vector<Sequence> grid_target_reference(const GridTask& task, int count, Rng& rng) {
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    Sequence x = task.sample_prior(rng);
    if (task.satisfies_reward(x)) out.push_back(std::move(x));
  }
  return out;
}

double elbo_bpd(const Denoiser& model, const NoiseSchedule& schedule, const std::vector<Sequence>& data, int draws,
                Rng& rng) {
  if (data.empty()) throw InvalidInput("elbo_bpd: no data");
  double total = 0.0;
  for (const auto& x : data) {
    double nll = 0.0;
    for (int k = 0; k < draws; ++k) nll += elbo_loss(model, x, schedule, rng, false).value;
    total += nll / draws / (x.size() * std::log(2.0));
  }
  return total / static_cast<double>(data.size());
}

Histogram2D grid_histogram(const GridTask& task, const std::vector<Sequence>& samples) {
  Histogram2D h{task.side, task.side, std::vector<double>(static_cast<std::size_t>(task.side) * task.side, 0.0)};
  for (const auto& s : samples) h.at(s[1], s[0]) += 1.0;
  return h;
}

void write_heatmap(const Histogram2D& hist, const std::string& path) {
  if (hist.width < 1 || hist.height < 1 ||
      hist.counts.size() != static_cast<std::size_t>(hist.width) * static_cast<std::size_t>(hist.height)) {
    throw InvalidInput("heatmap: counts do not match width x height");
  }
  double peak = 0.0;
  for (double v : hist.counts) {
    if (v < 0.0 || !std::isfinite(v)) throw InvalidInput("heatmap: counts must be finite and >= 0");
    peak = std::max(peak, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write heatmap '" + path + "'");
  out << "P5\n" << hist.width << " " << hist.height << "\n255\n";
  std::vector<unsigned char> pixels(hist.counts.size(), 0);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      pixels[i] = static_cast<unsigned char>(std::lround(255.0 * hist.counts[i] / peak));
    }
  }
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("short write to heatmap '" + path + "'");
}

CommandResult cmd_pretrain(const RunConfig& c) {
  const TaskContext task = make_task(c);
  auto model = make_model(c, task);
  const NoiseSchedule schedule = make_schedule(c);
  const fs::path out = prepare_out(c);

  PretrainOptions po;
  po.batch = c.batch_size;
  po.lr = c.lr_pretrain;
  po.ema_decay = c.ema_decay;
  po.grad_clip = c.grad_clip;
  Pretrainer trainer(*model, schedule, task.data, po, c.seed);

  auto metrics = open_out(out / "metrics.csv");
  auto timing = open_out(out / "timing.csv");
  metrics << "step,loss\n";
  timing << "step,wall_seconds\n";
  const auto start = std::chrono::steady_clock::now();
  double loss = 0.0;
  for (int step = 1; step <= c.pretrain_steps; ++step) {
    loss = trainer.step();
    metrics << step << "," << fmt(loss) << "\n";
    timing << step << "," << fmt(seconds_since(start)) << "\n";
    if (step % c.log_every == 0) std::clog << "pretrain step " << step << " loss " << loss << "\n";
  }

  Checkpoint ck;
  ck.stage = "pretrain";
  ck.config_text = serialize_config(c);
  ck.schedule = schedule.descriptor();
  ck.architecture = model->architecture();
  ck.params.assign(model->params().begin(), model->params().end());
  if (trainer.has_ema()) {
    ck.ema = trainer.ema().shadow;
    ck.ema_decay = trainer.ema().decay;
  }
  ck.steps = trainer.steps_done();
  ck.adam_lr = trainer.adam().lr;
  ck.adam_step = trainer.adam().step;
  ck.adam_m = trainer.adam().m;
  ck.adam_v = trainer.adam().v;
  save_checkpoint((out / "pretrain.ckpt").string(), ck);

  CommandResult r;
  r.metrics["final_loss"] = loss;
  r.metrics["steps"] = c.pretrain_steps;
  Json s;
  s["command"] = "pretrain";
  s["seed"] = c.seed;
  s["steps"] = c.pretrain_steps;
  s["final_loss"] = loss;
  s["wall_seconds"] = seconds_since(start);
  write_json(out / "summary.json", s);
  r.files = {(out / "pretrain.ckpt").string(), (out / "metrics.csv").string(), (out / "timing.csv").string(),
             (out / "summary.json").string()};
  return r;
}

CommandResult cmd_finetune(const RunConfig& c) {
  const TaskContext task = make_task(c);
  const Checkpoint pre_ck = require_checkpoint(c.pre_checkpoint, "pre_checkpoint");
  auto pre = pre_ck.make_model(true);
  check_compatible(*pre, task, c.pre_checkpoint);
  const NoiseSchedule schedule = pre_ck.make_schedule();
  const FinetuneOptions options = finetune_options(c);
  Finetuner ft(*pre, *task.reward, schedule, options, task.data, c.seed);
  const fs::path out = prepare_out(c);

  auto metrics = open_out(out / "metrics.csv");
  auto timing = open_out(out / "timing.csv");
  metrics << "step,loss,mean_log_z,skipped,warmup,pretrained_calls,finetuned_calls,reward_calls,"
             "on_policy_mean_log_reward,log_z_scalar\n";
  timing << "step,wall_seconds\n";
  const auto start = std::chrono::steady_clock::now();
  StepMetrics m;
  for (int step = 1; step <= c.finetune_steps; ++step) {
    m = ft.step();
    metrics << m.step << "," << fmt(m.loss) << "," << fmt(m.mean_log_z) << "," << m.skipped << ","
            << (m.warmup ? 1 : 0) << "," << m.calls.pretrained << "," << m.calls.finetuned << "," << m.calls.reward
            << "," << fmt(ft.last_on_policy_log_reward()) << "," << fmt(ft.log_z_scalar()) << "\n";
    timing << step << "," << fmt(seconds_since(start)) << "\n";
    if (step % c.log_every == 0) {
      std::clog << "finetune step " << step << " loss " << m.loss << " log_z " << m.mean_log_z << " log_r "
                << ft.last_on_policy_log_reward() << "\n";
    }
  }

  Checkpoint ck;
  ck.stage = c.method;
  ck.config_text = serialize_config(c);
  ck.schedule = schedule.descriptor();
  ck.architecture = ft.model().architecture();
  ck.params.assign(ft.model().params().begin(), ft.model().params().end());
  ck.steps = ft.steps_done();
  ck.adam_lr = ft.model_adam().lr;
  ck.adam_step = ft.model_adam().step;
  ck.adam_m = ft.model_adam().m;
  ck.adam_v = ft.model_adam().v;
  ck.head_architecture = ft.head().architecture();
  ck.head_params.assign(ft.head().params().begin(), ft.head().params().end());
  ck.head_adam_step = ft.head_adam().step;
  ck.head_adam_m = ft.head_adam().m;
  ck.head_adam_v = ft.head_adam().v;
  ck.log_z_scalar = ft.log_z_scalar();
  save_checkpoint((out / "finetune.ckpt").string(), ck);

  CommandResult r;
  r.metrics["final_loss"] = m.loss;
  r.metrics["on_policy_mean_log_reward"] = ft.last_on_policy_log_reward();
  r.metrics["log_z_scalar"] = ft.log_z_scalar();
  Json s;
  s["command"] = "finetune";
  s["method"] = c.method;
  s["seed"] = c.seed;
  s["steps"] = c.finetune_steps;
  s["final_loss"] = m.loss;
  s["on_policy_mean_log_reward"] = ft.last_on_policy_log_reward();
  s["log_z_scalar"] = ft.log_z_scalar();
  s["wall_seconds"] = seconds_since(start);
  write_json(out / "summary.json", s);
  r.files = {(out / "finetune.ckpt").string(), (out / "metrics.csv").string(), (out / "timing.csv").string(),
             (out / "summary.json").string()};
  return r;
}

CommandResult cmd_sample(const RunConfig& c, SampleRequest request) {
  if (request.best_of > 0 && request.particles > 0) {
    throw ConfigError("--best-of and --particles are mutually exclusive");
  }
  if (request.best_of < 0 || request.particles < 0) throw ConfigError("sample counts must be positive");
  const TaskContext task = make_task(c);
  const Checkpoint ck = require_checkpoint(c.checkpoint, "checkpoint");
  auto model = ck.make_model(true);
  check_compatible(*model, task, c.checkpoint);
  const NoiseSchedule schedule = ck.make_schedule();
  const TimeGrid grid(c.inference_steps);
  const fs::path out = prepare_out(c);
  const GuidanceSelection selection =
      c.guidance == "softmax" ? GuidanceSelection::kSoftmax : GuidanceSelection::kArgmax;

  std::string mode = "ancestral";
  if (request.best_of > 1) mode = "best-of-" + std::to_string(request.best_of);
  if (request.particles > 0) mode = "particles-" + std::to_string(request.particles);

  TokenDataset ds;
  ds.vocab_size = task.vocab.size();
  ds.source = "mdm-steer sample";
  CallCounter calls;
  double sum_log_r = 0.0;
  for (int k = 0; k < c.eval_samples; ++k) {
    Rng rng = make_stream(c.seed, "sample", static_cast<std::uint64_t>(k));
    Sequence x;
    if (request.particles > 0) {
      x = guided_particle_sample(*model, *task.reward, request.particles, grid, schedule, rng, &calls, selection);
    } else if (request.best_of > 1) {
      x = best_of_n(*model, *task.reward, request.best_of, grid, schedule, rng, &calls);
    } else {
      x = ancestral_sample(*model, grid, schedule, rng, &calls);
    }
    sum_log_r += task.reward->log_reward(x);
    ds.items.push_back(std::move(x));
  }
  save_dataset(ds, (out / "samples.txt").string());

  const double mean_log_r = sum_log_r / c.eval_samples;
  const double calls_per_step =
      static_cast<double>(calls.pretrained + calls.finetuned) / (static_cast<double>(c.eval_samples) * grid.steps());
  CommandResult r;
  r.metrics["mean_log_reward"] = mean_log_r;
  r.metrics["count"] = c.eval_samples;
  r.metrics["model_calls_per_step"] = calls_per_step;
  Json s;
  s["command"] = "sample";
  s["mode"] = mode;
  s["seed"] = c.seed;
  s["count"] = c.eval_samples;
  s["mean_log_reward"] = mean_log_r;
  s["model_calls_per_step"] = calls_per_step;
  if (task.grid) {
    int hits = 0;
    for (const auto& x : ds.items) hits += task.grid->satisfies_reward(x) ? 1 : 0;
    r.metrics["reward_fraction"] = static_cast<double>(hits) / c.eval_samples;
    s["reward_fraction"] = r.metrics["reward_fraction"];
  }
  write_json(out / "summary.json", s);
  r.files = {(out / "samples.txt").string(), (out / "summary.json").string()};
  return r;
}

CommandResult cmd_eval(const RunConfig& c) {
  const TaskContext task = make_task(c);
  const Checkpoint ck = require_checkpoint(c.checkpoint, "checkpoint");
  auto model = ck.make_model(true);
  check_compatible(*model, task, c.checkpoint);
  const NoiseSchedule schedule = ck.make_schedule();
  const TimeGrid grid(c.inference_steps);
  const fs::path out = prepare_out(c);

  std::vector<Sequence> samples;
  samples.reserve(static_cast<std::size_t>(c.eval_samples));
  double sum_log_r = 0.0;
  for (int k = 0; k < c.eval_samples; ++k) {
    Rng rng = make_stream(c.seed, "eval", static_cast<std::uint64_t>(k));
    samples.push_back(ancestral_sample(*model, grid, schedule, rng));
    sum_log_r += task.reward->log_reward(samples.back());
  }
  Rng bpd_rng = make_stream(c.seed, "eval-bpd");
  const double bpd = elbo_bpd(*model, schedule, task.heldout, c.elbo_draws, bpd_rng);

  CommandResult r;
  Json s;
  s["command"] = "eval";
  s["checkpoint"] = c.checkpoint;
  s["seed"] = c.seed;
  s["count"] = c.eval_samples;
  r.metrics["mean_log_reward"] = sum_log_r / c.eval_samples;
  r.metrics["bpd"] = bpd;
  if (task.grid) {
    const GridTask& g = *task.grid;
    int hits = 0;
    for (const auto& x : samples) hits += g.satisfies_reward(x) ? 1 : 0;
    Rng ref_rng = make_stream(c.seed, "reference");
    const auto reference = grid_target_reference(g, kReferenceSize, ref_rng);
    r.metrics["reward_fraction"] = static_cast<double>(hits) / c.eval_samples;
    r.metrics["coarse_tv"] = tv_distance(empirical_histogram(samples, GridTask::coarse_bin),
                                         empirical_histogram(reference, GridTask::coarse_bin));
    const std::string heat = (out / "heatmap.pgm").string();
    write_heatmap(grid_histogram(g, samples), heat);
    r.files.push_back(heat);
  }
  if (task.data_table) {
    const DistTable target = exact_target(*task.data_table, *task.reward);
    r.metrics["exact_tv"] = tv_distance(exact_endpoint_law(*model, grid, schedule), target);
    r.metrics["empirical_tv"] = tv_distance(empirical_histogram(samples), target);
  }
  for (const auto& [k, v] : r.metrics) s[k] = v;
  write_json(out / "eval.json", s);
  r.files.push_back((out / "eval.json").string());
  return r;
}

}  // namespace mdmsteer
