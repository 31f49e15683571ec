#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "mdmsteer/baselines.hpp"
#include "mdmsteer/call_counter.hpp"
#include "mdmsteer/commands.hpp"
#include "mdmsteer/errors.hpp"
#include "mdmsteer/objectives.hpp"

namespace mdmsteer {

namespace {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::string describe(double a, const char* op, double b) {
  std::ostringstream s;
  s.precision(6);
  s << a << " " << op << " " << b;
  return s.str();
}

// Golden-section search on a unimodal function, polished with
// finite-difference Newton steps.
double argmin_1d(const std::function<double(double)>& f, double lo, double hi) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  double z = (a + b) / 2.0;
  const double h = 1e-2;
  for (int it = 0; it < 4; ++it) {
    const double up = f(z + h), mid = f(z), down = f(z - h);
    const double curv = (up - 2.0 * mid + down) / (h * h);
    if (!(curv > 0.0)) break;
    z -= (up - down) / (2.0 * h) / curv;
  }
  return z;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

class Suite {
 public:
  Suite(const RunConfig& c)
      : c_(c),
        vocab_(c.tiny_vocab),
        n_(c.tiny_length),
        schedule_(make_schedule(c)),
        grid_(c.inference_steps),
        reward_(n_, vocab_.clean_size(), c.tiny_reward_weights, c.reward_beta),
        pre_(make_constant_tabular(vocab_, n_, c.buckets, c.tiny_pre_probs)),
        exact_q_(tilt_tabular(*pre_, reward_)),
        q_(perturbed(*pre_, 0.5, 1)),
        data_(mean_field_table(vocab_, n_, c.tiny_pre_probs)),
        bias_(c.inject_logz_bias) {}

  std::vector<Check> run() {
    std::vector<Check> out;
    out.push_back(batch_logz_argmin());
    out.push_back(prop1_lower_bound());
    out.push_back(prop1_equality());
    out.push_back(is_zero_variance());
    out.push_back(mc_consistency());
    for (auto& g : gradient_checks()) out.push_back(std::move(g));
    for (auto& k : call_checks()) out.push_back(std::move(k));
    return out;
  }

 private:
  std::unique_ptr<TabularDenoiser> perturbed(const TabularDenoiser& base, double scale, std::uint64_t salt) const {
    auto m = std::make_unique<TabularDenoiser>(base);
    Rng rng = make_stream(c_.seed, "oracle-perturb", salt);
    std::normal_distribution<double> noise(0.0, scale);
    for (double& p : m->params()) p += noise(rng);
    return m;
  }

  MaskedSample random_xt(Rng& rng) const {
    const Sequence x0 = data_.sample(rng);
    const double t = 0.05 + 0.9 * uniform01(rng);
    MaskedSample xt = mask_forward(vocab_, schedule_, x0, t, rng);
    // At least one masked position keeps every estimator non-trivial.
    if (xt.seq.mask_count(vocab_) == 0) xt.seq[0] = vocab_.mask_id();
    return xt;
  }

  std::vector<Sequence> draws_from(const Denoiser& model, const MaskedSample& xt, int count, Rng& rng) const {
    const DenoiserOutput mu = model.predict_mean(xt);
    std::vector<Sequence> out;
    for (int k = 0; k < count; ++k) out.push_back(sample_endpoint(vocab_, mu, xt, rng));
    return out;
  }

  Check batch_logz_argmin() const {
    Rng rng = make_stream(c_.seed, "oracle-batch-logz");
    double worst = 0.0;
    for (int b = 0; b < 100; ++b) {
      const MaskedSample xt = random_xt(rng);
      const auto batch = draws_from(*q_, xt, 8, rng);
      std::vector<double> a;
      for (const auto& x : batch) a.push_back(ddpp_single_step_loss(*q_, *pre_, reward_, x, xt, 0.0).residual);
      const double closed = batch_optimal_logz(*q_, *pre_, reward_, xt, batch) + bias_;
      const double numeric = argmin_1d(
          [&](double z) {
            double s = 0.0;
            for (double r : a) s += (r + z) * (r + z);
            return s;
          },
          -60.0, 60.0);
      worst = std::max(worst, std::abs(closed - numeric));
    }
    return {"batch_logz_argmin", worst <= 1e-8, "max |closed - argmin| = " + describe(worst, "<=", 1e-8)};
  }

  Check prop1_lower_bound() const {
    Rng rng = make_stream(c_.seed, "oracle-prop1");
    const int batches = 2000;
    double sum = 0.0, sum_sq = 0.0;
    for (int b = 0; b < batches; ++b) {
      const MaskedSample xt = random_xt(rng);
      const auto batch = draws_from(*q_, xt, c_.M, rng);
      const double l1 = batch_optimal_logz(*q_, *pre_, reward_, xt, batch) + bias_;
      const double is = logz_is(*pre_, *q_, xt, c_.M, reward_, rng) + bias_;
      const double diff = l1 - is;
      sum += diff;
      sum_sq += diff * diff;
    }
    const double mean = sum / batches;
    const double se = std::sqrt(std::max(0.0, sum_sq / batches - mean * mean) / batches);
    return {"prop1_lower_bound", mean <= 3.0 * se,
            "mean(batch - is) = " + describe(mean, "<=", 3.0 * se) + " (3 SE)"};
  }

  Check prop1_equality() const {
    Rng rng = make_stream(c_.seed, "oracle-prop1-exact");
    double worst = 0.0;
    for (int b = 0; b < 50; ++b) {
      const MaskedSample xt = random_xt(rng);
      const double oracle = exact_denoising_posterior(*pre_, xt, reward_).log_z;
      const auto batch = draws_from(*exact_q_, xt, c_.M, rng);
      const double l1 = batch_optimal_logz(*exact_q_, *pre_, reward_, xt, batch) + bias_;
      const double is = logz_is(*pre_, *exact_q_, xt, c_.M, reward_, rng) + bias_;
      worst = std::max({worst, std::abs(l1 - oracle), std::abs(is - oracle)});
    }
    return {"prop1_equality_at_exact_proposal", worst <= 1e-10,
            "max |estimate - oracle| = " + describe(worst, "<=", 1e-10)};
  }

  Check is_zero_variance() const {
    Rng rng = make_stream(c_.seed, "oracle-is");
    double worst = 0.0;
    for (int b = 0; b < 50; ++b) {
      const MaskedSample xt = random_xt(rng);
      const double oracle = exact_denoising_posterior(*pre_, xt, reward_).log_z;
      const IsEstimate est = logz_is_detailed(*pre_, *exact_q_, xt, c_.M, reward_, rng);
      for (double w : est.log_weights) worst = std::max(worst, std::abs(w + bias_ - oracle));
    }
    return {"is_zero_variance", worst <= 1e-10, "max |log w - oracle| = " + describe(worst, "<=", 1e-10)};
  }

  Check mc_consistency() const {
    Rng rng = make_stream(c_.seed, "oracle-mc");
    std::vector<MaskedSample> xts;
    std::vector<double> oracle;
    for (int k = 0; k < 30; ++k) {
      xts.push_back(random_xt(rng));
      oracle.push_back(exact_denoising_posterior(*pre_, xts.back(), reward_).log_z);
    }
    std::vector<double> medians;
    for (int M : {10, 100, 1000}) {
      std::vector<double> err;
      for (std::size_t k = 0; k < xts.size(); ++k) {
        err.push_back(std::abs(logz_mc(*pre_, xts[k], M, reward_, rng) + bias_ - oracle[k]));
      }
      medians.push_back(median(err));
    }
    const bool shrinking = medians[1] <= medians[0] * 1.1 + 1e-12 && medians[2] <= medians[1] * 1.1 + 1e-12;
    const bool small = medians[2] <= 0.05;
    return {"logz_mc_consistency", shrinking && small,
            "median errors M=10,100,1000: " + std::to_string(medians[0]) + ", " + std::to_string(medians[1]) +
                ", " + std::to_string(medians[2])};
  }

  Check gradient(const std::string& name, std::span<double> params, const LossClosure& loss) const {
    const GradCheckReport r = grad_check(params, loss, 1e-5, 1e-6);
    return {"grad_" + name, r.max_rel_error <= 1e-4, "max rel error = " + describe(r.max_rel_error, "<=", 1e-4)};
  }

  std::vector<Check> gradient_checks() const {
    std::vector<Check> out;
    auto q = perturbed(*pre_, 0.5, 2);
    Rng rng = make_stream(c_.seed, "oracle-grad");
    const Sequence x0 = data_.sample(rng);
    MaskedSample xt = mask_forward(vocab_, schedule_, x0, 0.6, rng);
    xt.seq[0] = vocab_.mask_id();

    out.push_back(gradient("elbo", q->params(), [&] { return elbo_loss_at(*q, x0, xt, schedule_); }));
    out.push_back(gradient("ddpp_single_step", q->params(), [&] {
      const auto l = ddpp_single_step_loss(*q, *pre_, reward_, x0, xt, 0.3);
      return LossEval{l.value, l.grad};
    }));

    const int k = c_.train_steps;
    MaskedSample lattice_xt = mask_forward(vocab_, schedule_, x0, static_cast<double>(k / 2) / k, rng);
    lattice_xt.seq[0] = vocab_.mask_id();
    out.push_back(gradient("ddpp_subtrajectory", q->params(), [&] {
      Rng inner = make_stream(c_.seed, "oracle-grad-subtraj");
      const auto l = ddpp_subtrajectory_loss(*q, *pre_, reward_, x0, lattice_xt, 1.0 / k, 0.3, schedule_, inner, 4);
      return LossEval{l.value, l.grad};
    }));

    for (GradEstimatorKind est : {GradEstimatorKind::kStraightThrough, GradEstimatorKind::kReinmax}) {
      KlDraws draws;
      Rng kl_rng = make_stream(c_.seed, "oracle-grad-kl");
      do {
        ddpp_kl_loss(*q, *pre_, reward_, c_.K, est, schedule_, TimeGrid(k), kl_rng, nullptr, c_.reinmax_tau, &draws);
      } while (draws.xt.seq.mask_count(vocab_) == 0);
      out.push_back(gradient("ddpp_kl_" + to_string(est), q->params(), [&] {
        return ddpp_kl_surrogate(*q, *pre_, reward_, draws, est, c_.reinmax_tau);
      }));
    }

    Rng traj_rng = make_stream(c_.seed, "oracle-grad-rtb");
    const Trajectory traj = simulate_trajectory(*q, TimeGrid(k), schedule_, traj_rng);
    out.push_back(gradient("rtb", q->params(), [&] {
      Rng inner = make_stream(c_.seed, "oracle-grad-rtb-detach");
      const auto l = rtb_loss(*q, *pre_, reward_, 0.2, traj, c_.detach_fraction, schedule_, inner);
      return LossEval{l.value, l.grad};
    }));
    return out;
  }

  Check count_check(const std::string& name, std::int64_t got, std::int64_t want) const {
    return {"calls_" + name, got == want,
            "calls " + std::to_string(got) + " == " + std::to_string(want)};
  }

  std::vector<Check> call_checks() const {
    std::vector<Check> out;
    Rng rng = make_stream(c_.seed, "oracle-calls");
    const int T = c_.inference_steps;
    const MaskedSample xt = random_xt(rng);
    const Sequence x0 = draws_from(*q_, xt, 1, rng).front();

    CallCounter lb;
    ddpp_single_step_loss(*q_, *pre_, reward_, x0, xt, 0.0, &lb);
    out.push_back(count_check("ddpp_lb_pretrained_per_example", lb.pretrained, 1));

    CallCounter is;
    const IsEstimate est = logz_is_detailed(*pre_, *q_, xt, c_.M, reward_, rng, &is);
    ddpp_single_step_loss(*q_, est.pre_mu, reward_, x0, xt, est.log_z, &is);
    out.push_back(count_check("ddpp_is_pretrained_per_example", is.pretrained, c_.M));

    CallCounter kl;
    ddpp_kl_loss(*q_, *pre_, reward_, c_.K, GradEstimatorKind::kStraightThrough, schedule_, TimeGrid(T), rng, &kl);
    out.push_back(count_check("ddpp_kl_pretrained_per_step", kl.pretrained, 1));

    CallCounter rtb;
    const Trajectory traj = simulate_trajectory(*q_, TimeGrid(T), schedule_, rng);
    rtb_loss(*q_, *pre_, reward_, 0.0, traj, c_.detach_fraction, schedule_, rng, &rtb);
    out.push_back(count_check("rtb_pretrained_per_step", rtb.pretrained, T));

    std::vector<CallCounter> per_step;
    guided_particle_sample(*pre_, reward_, c_.n_particles, TimeGrid(T), schedule_, rng, nullptr,
                           GuidanceSelection::kArgmax, &per_step);
    std::int64_t worst = c_.n_particles;
    for (const auto& s : per_step) {
      if (s.pretrained != c_.n_particles) worst = s.pretrained;
    }
    out.push_back(count_check("particles_per_inference_step", per_step.size() == static_cast<std::size_t>(T) ? worst : -1,
                              c_.n_particles));

    CallCounter inf;
    ancestral_sample(*q_, TimeGrid(T), schedule_, rng, &inf, true);
    out.push_back(count_check("ddpp_inference_per_step", inf.finetuned, T));
    return out;
  }

  const RunConfig& c_;
  Vocabulary vocab_;
  int n_;
  NoiseSchedule schedule_;
  TimeGrid grid_;
  AdditiveReward reward_;
  std::unique_ptr<TabularDenoiser> pre_;
  std::unique_ptr<TabularDenoiser> exact_q_;
  std::unique_ptr<TabularDenoiser> q_;
  DistTable data_;
  double bias_;
};

}  // namespace

CommandResult cmd_oracle_check(const RunConfig& c) {
  c.validate();
  if (c.task != "tiny") throw ConfigError("oracle-check needs task = tiny");
  std::uint64_t total = 1;
  for (int i = 0; i < c.tiny_length; ++i) total *= static_cast<std::uint64_t>(c.tiny_vocab - 1);
  if (total > 4096) throw ConfigError("oracle-check instance too large to enumerate");

  const std::vector<Check> checks = Suite(c).run();
  nlohmann::ordered_json report;
  report["command"] = "oracle-check";
  report["seed"] = c.seed;
  report["inject_logz_bias"] = c.inject_logz_bias;
  CommandResult r;
  bool all = true;
  for (const auto& ch : checks) {
    report["checks"].push_back({{"name", ch.name}, {"passed", ch.passed}, {"detail", ch.detail}});
    r.metrics[ch.name] = ch.passed ? 1.0 : 0.0;
    std::cout << (ch.passed ? "PASS " : "FAIL ") << ch.name << "  " << ch.detail << "\n";
    all = all && ch.passed;
  }
  report["passed"] = all;
  r.exit_code = all ? 0 : 1;

  const std::filesystem::path out(c.out_dir);
  std::filesystem::create_directories(out);
  const auto path = out / "oracle_check.json";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << report.dump(2) << "\n";
  r.files.push_back(path.string());
  return r;
}

}  // namespace mdmsteer
