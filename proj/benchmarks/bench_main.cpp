#include <benchmark/benchmark.h>

#include "mdmsteer/objectives.hpp"
#include "mdmsteer/oracle.hpp"
#include "mdmsteer/tasks.hpp"

using namespace mdmsteer;

namespace {

MaskedSample half_masked(const Vocabulary& v, int n) {
  Sequence s(std::vector<Token>(static_cast<std::size_t>(n), v.mask_id()));
  for (int i = 0; i < n; i += 2) s[static_cast<std::size_t>(i)] = 0;
  return {s, 0.5};
}

}  // namespace

static void BM_MlpForward(benchmark::State& state) {
  GridTask task;
  MlpDenoiser m(task.vocab(), 2, MlpShape{64, static_cast<int>(state.range(0))}, 1);
  const MaskedSample xt{Sequence{task.vocab().mask_id(), task.vocab().mask_id()}, 1.0};
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(xt));
}
BENCHMARK(BM_MlpForward)->Arg(64)->Arg(256);

static void BM_MlpBackward(benchmark::State& state) {
  GridTask task;
  MlpDenoiser m(task.vocab(), 2, MlpShape{64, 256}, 1);
  const MaskedSample xt{Sequence{3, task.vocab().mask_id()}, 0.5};
  const auto pass = m.forward(xt);
  std::vector<double> dlogits(static_cast<std::size_t>(2 * m.classes()), 1e-3), grad(m.num_params());
  for (auto _ : state) {
    m.backward(pass, dlogits, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_MlpBackward);

static void BM_AncestralGrid(benchmark::State& state) {
  GridTask task;
  MlpDenoiser m(task.vocab(), 2, MlpShape{64, 256}, 1);
  const TimeGrid grid(static_cast<int>(state.range(0)));
  const auto schedule = NoiseSchedule::linear();
  Rng rng = make_stream(1, "bench");
  for (auto _ : state) benchmark::DoNotOptimize(ancestral_sample(m, grid, schedule, rng));
}
BENCHMARK(BM_AncestralGrid)->Arg(32)->Arg(128);

static void BM_LogZIs(benchmark::State& state) {
  Vocabulary v(9);
  TabularDenoiser pre(v, 6, 4);
  AdditiveReward r(6, 8, std::vector<double>(48, 0.1));
  const auto xt = half_masked(v, 6);
  Rng rng = make_stream(2, "bench");
  const int M = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(logz_is(pre, pre, xt, M, r, rng));
}
BENCHMARK(BM_LogZIs)->Arg(16)->Arg(256);

static void BM_ExactLikelihood(benchmark::State& state) {
  Vocabulary v(4);
  const int n = static_cast<int>(state.range(0));
  TabularDenoiser tab(v, n, 4);
  const Sequence x(std::vector<Token>(static_cast<std::size_t>(n), 1));
  const TimeGrid grid(16);
  const auto schedule = NoiseSchedule::linear();
  for (auto _ : state) benchmark::DoNotOptimize(exact_mdm_likelihood(tab, x, grid, schedule));
}
BENCHMARK(BM_ExactLikelihood)->Arg(4)->Arg(8);
BENCHMARK_MAIN();
