// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "difftune/dpok.hpp"
#include "difftune/verify.hpp"

namespace {

using namespace difftune;

Denoiser bench_denoiser() {
  Denoiser den = make_denoiser(2, 50, 1);
  Rng rng(7);
  init_denoiser(den, rng);
  return den;
}

void BM_NetForward(benchmark::State& state) {
  const Denoiser den = bench_denoiser();
  Rng rng(1);
  const Vec x = rng.normal_vec(2);
  int t = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(den.forward(den.params, x, t, 0));
    t = t % 50 + 1;
  }
}
BENCHMARK(BM_NetForward);

void BM_NetBackward(benchmark::State& state) {
  const Denoiser den = bench_denoiser();
  Rng rng(1);
  const Vec x = rng.normal_vec(2);
  const Vec dout = rng.normal_vec(2);
  Vec grad = Vec::Zero(den.param_count());
  Mlp::Trace trace;
  for (auto _ : state) {
    den.forward(den.params, x, 25, 0, &trace);
    den.net.backward(den.params, trace, dout, grad);
    benchmark::DoNotOptimize(grad.data());
  }
}
BENCHMARK(BM_NetBackward);

void BM_SampleTrajectory(benchmark::State& state) {
  const Denoiser den = bench_denoiser();
  const NoiseSchedule sched = default_schedule();
  Rng rng(2);
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_trajectory(den, den.params, sched, 0, rng));
}
BENCHMARK(BM_SampleTrajectory);

void BM_PgLossStep(benchmark::State& state) {
  const Denoiser den = bench_denoiser();
  const NoiseSchedule sched = default_schedule();
  const ParamSnapshot pre = make_snapshot(den);
  RLConfig cfg;
  Rng rng(3);
  const Trajectory traj = sample_trajectory(den, den.params, sched, 0, rng);
  Transition tr;
  tr.t = 25;
  tr.x_t = traj.state(25);
  tr.x_prev = traj.state(24);
  tr.z = 0;
  tr.reward = 1.0;
  tr.behavior_logprob = traj.logprob_at(25);
  GradAccumulator grad(den.param_count());
  for (auto _ : state) {
    grad.reset();
    benchmark::DoNotOptimize(
        pg_loss(den, den.params, pre, sched, tr, cfg, 0.0, &grad));
  }
}
BENCHMARK(BM_PgLossStep);

void BM_ExactMarginals(benchmark::State& state) {
  Rng rng(4);
  const LinearGaussianChain chain = random_chain(2, 4, rng);
  for (auto _ : state) benchmark::DoNotOptimize(exact_marginals(chain));
}
BENCHMARK(BM_ExactMarginals);

} // namespace

BENCHMARK_MAIN();
