// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/diffusion.hpp"

#include <cmath>
#include <string>

namespace difftune {

void Trajectory::validate() const {
  const int T = this->T();
  if (T < 1) throw ConfigError("trajectory: empty");
  if (static_cast<int>(states.size()) != T + 1)
    throw ConfigError("trajectory: states must have T+1 entries");
  for (const auto& s : states)
    if (!s.allFinite()) throw NumericError("trajectory: non-finite state");
  for (double lp : step_logprobs)
    if (!std::isfinite(lp)) throw NumericError("trajectory: non-finite logprob");
}

Vec q_sample(const NoiseSchedule& sched, const Vec& x0, int t, const Vec& noise) {
  if (x0.size() != noise.size())
    throw ConfigError("q_sample: x0 and noise dimension mismatch");
  const double abar = sched.alpha_bar(t);  // throws IndexError on bad t
  if (t < 1) throw IndexError("q_sample: t must be >= 1");
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * noise;
}

Vec reverse_mean(const Denoiser& den, const Vec& params,
                 const NoiseSchedule& sched, const Vec& x_t, int t, int z) {
  const Vec eps = den.forward(params, x_t, t, z);
  const double k = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  return (x_t - k * eps) / std::sqrt(sched.alpha(t));
}

double gaussian_step_logprob(const Vec& x_prev, const Vec& mu, double sigma_sq) {
  if (!(sigma_sq > 0.0))
    throw DomainError("step logprob: sigma_sq must be > 0");
  const double d = static_cast<double>(mu.size());
  return -(x_prev - mu).squaredNorm() / (2.0 * sigma_sq) -
         0.5 * d * std::log(2.0 * M_PI * sigma_sq);
}

StepResult sample_step(const Denoiser& den, const Vec& params,
                       const NoiseSchedule& sched, const Vec& x_t, int t, int z,
                       const Vec& noise) {
  if (noise.size() != x_t.size())
    throw ConfigError("sample_step: noise dimension mismatch");
  Vec mu = reverse_mean(den, params, sched, x_t, t, z);
  const double var = sched.step_var(t);
  if (var == 0.0) return StepResult{std::move(mu), 0.0};
  Vec x_prev = mu + std::sqrt(var) * noise;
  const double lp = gaussian_step_logprob(x_prev, mu, var);
  return StepResult{std::move(x_prev), lp};
}

Trajectory sample_trajectory(const Denoiser& den, const Vec& params,
                             const NoiseSchedule& sched, int z, Rng& rng) {
  const int T = sched.T;
  const int d = den.d();
  Trajectory traj;
  traj.prompt = z;
  traj.states.reserve(T + 1);
  traj.step_logprobs.reserve(T);
  traj.behavior_params_version = den.version;
  traj.states.push_back(rng.normal_vec(d));
  for (int t = T; t >= 1; --t) {
    // Noise is drawn unconditionally so the stream advances uniformly even
    // through a degenerate step.
    const Vec noise = rng.normal_vec(d);
    StepResult step = sample_step(den, params, sched, traj.states.back(), t, z, noise);
    if (!step.x_prev.allFinite())
      throw RolloutError("rollout produced a non-finite state at step t=" +
                         std::to_string(t), t);
    traj.states.push_back(std::move(step.x_prev));
    traj.step_logprobs.push_back(step.logprob);
  }
  return traj;
}

double stepwise_gaussian_kl(const Vec& mu_a, const Vec& mu_b, double sigma_sq) {
  if (mu_a.size() != mu_b.size())
    throw ConfigError("stepwise kl: mean dimension mismatch");
  if (!(sigma_sq > 0.0))
    throw DomainError("stepwise kl: sigma_sq must be > 0");
  return (mu_a - mu_b).squaredNorm() / (2.0 * sigma_sq);
}

Vec x0_from_eps(const NoiseSchedule& sched, const Vec& x_t, const Vec& eps,
                int t, X0PredMode mode) {
  const double a = mode == X0PredMode::standard ? sched.alpha_bar(t) : sched.alpha(t);
  return (x_t - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
}

double x0_from_eps_deps(const NoiseSchedule& sched, int t, X0PredMode mode) {
  const double a = mode == X0PredMode::standard ? sched.alpha_bar(t) : sched.alpha(t);
  return -std::sqrt(1.0 - a) / std::sqrt(a);
}

Vec x0_predictor(const Denoiser& den, const Vec& params,
                 const NoiseSchedule& sched, const Vec& x_t, int t, int z,
                 X0PredMode mode) {
  const Vec eps = den.forward(params, x_t, t, z);
  return x0_from_eps(sched, x_t, eps, t, mode);
}

} // namespace difftune
