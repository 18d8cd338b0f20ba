// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "difftune/common.hpp"
#include "difftune/denoiser.hpp"
#include "difftune/rng.hpp"
#include "difftune/schedule.hpp"

namespace difftune {

// One reverse-process rollout. states holds x_T .. x_0 (T+1 entries);
// step_logprobs holds log p(x_{t-1} | x_t) for t = T .. 1 (T entries, 0 for a
// degenerate final step). reward stays unset until a reward model scores x_0.
struct Trajectory {
  int prompt = 0;
  std::vector<Vec> states;
  std::vector<double> step_logprobs;
  std::optional<double> reward;
  std::int64_t behavior_params_version = -1;

  int T() const { return static_cast<int>(step_logprobs.size()); }
  const Vec& state(int t) const { return states.at(T() - t); }     // x_t
  double logprob_at(int t) const { return step_logprobs.at(T() - t); }
  const Vec& x0() const { return states.back(); }
  void validate() const;  // shape and finiteness invariants
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
Vec q_sample(const NoiseSchedule& sched, const Vec& x0, int t, const Vec& noise);

// mu_theta(x_t, t, z) = (x_t - beta_t / sqrt(1-abar_t) * eps) / sqrt(alpha_t)
Vec reverse_mean(const Denoiser& den, const Vec& params,
                 const NoiseSchedule& sched, const Vec& x_t, int t, int z);

// Gaussian transition log-density with isotropic variance sigma_sq > 0:
//   -||x_prev - mu||^2 / (2 sigma_sq) - d/2 log(2 pi sigma_sq)
double gaussian_step_logprob(const Vec& x_prev, const Vec& mu, double sigma_sq);

struct StepResult {
  Vec x_prev;
  double logprob;
};

// Draws x_{t-1} = mu + sigma_t * noise. A degenerate step (sigma_t == 0)
// copies the mean and reports logprob 0.
StepResult sample_step(const Denoiser& den, const Vec& params,
                       const NoiseSchedule& sched, const Vec& x_t, int t, int z,
                       const Vec& noise);

// Full rollout from x_T ~ N(0, I). Throws RolloutError (with the failing step
// index) if a non-finite state appears.
Trajectory sample_trajectory(const Denoiser& den, const Vec& params,
                             const NoiseSchedule& sched, int z, Rng& rng);

// KL between two Gaussians with equal isotropic covariance sigma_sq I:
//   ||mu_a - mu_b||^2 / (2 sigma_sq)
double stepwise_gaussian_kl(const Vec& mu_a, const Vec& mu_b, double sigma_sq);

// Predicted x0 from the noise prediction at (x_t, t).
//   standard        f = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
//   per_step_alpha  f = (x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t)
// The second form uses the per-step alpha where the cumulative product is
// conventional; both are kept, standard is the default. They coincide at
// T = 1.
enum class X0PredMode { standard, per_step_alpha };

Vec x0_predictor(const Denoiser& den, const Vec& params,
                 const NoiseSchedule& sched, const Vec& x_t, int t, int z,
                 X0PredMode mode = X0PredMode::standard);

// Same predictor applied to an externally supplied eps (used by loss
// gradients, which need d f / d eps).
Vec x0_from_eps(const NoiseSchedule& sched, const Vec& x_t, const Vec& eps,
                int t, X0PredMode mode = X0PredMode::standard);
double x0_from_eps_deps(const NoiseSchedule& sched, int t,
                        X0PredMode mode = X0PredMode::standard);

} // namespace difftune
