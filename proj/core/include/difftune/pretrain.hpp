// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "difftune/denoiser.hpp"
#include "difftune/diffusion.hpp"
#include "difftune/scenario.hpp"

namespace difftune {

// Defaults are sized so the learned sampler's per-mode frequencies track the
// mixture weights to within a couple of percent: mode balance is decided by a
// weak signal in the high-noise steps, and noisier settings (smaller batches,
// larger steps) leave the balance orbiting several percent wide of the data
// weights no matter how long training runs.
struct PretrainConfig {
  int steps = 16000;
  int batch = 512;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  int log_every = 50;
  std::string loss_csv_path;  // empty: no file

  void validate() const;
};

// ||noise - eps_pred||^2 (summed over coordinates, not averaged).
double denoising_residual(const Vec& noise, const Vec& eps_pred);

// Residual through the network at x_t = q_sample(x0, t, noise); accumulates
// d(loss)/d(params) when grad is given.
double denoising_loss(const Denoiser& den, const Vec& params,
                      const NoiseSchedule& sched, const Vec& x0, int z, int t,
                      const Vec& noise, GradAccumulator* grad = nullptr);

// Standard denoising pretraining on scenario data: z ~ prompt weights,
// x0 ~ mixture(z), t uniform in {1..T}. Bumps den.version per step and
// returns the frozen result.
ParamSnapshot pretrain(Denoiser& den, const NoiseSchedule& sched,
                       const RewardScenario& scenario, const PretrainConfig& cfg,
                       std::vector<std::pair<long, double>>* loss_curve = nullptr);

} // namespace difftune
