// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "difftune/common.hpp"

namespace difftune {

// Variance used by the reverse-process sampler at step t:
//   beta_t        sigma_t^2 = beta_t        (every step stochastic)
//   tilde_beta_t  sigma_t^2 = beta_t * (1 - abar_{t-1}) / (1 - abar_t)
// In tilde mode sigma_1^2 == 0, so the final step is deterministic: it copies
// the posterior mean, its log-probability is defined as 0, and it is excluded
// from KL sums.
enum class ReverseCovMode { beta_t, tilde_beta_t };

enum class ScheduleShape { linear };

// Forward-noise schedule over steps t = 1..T (1-based accessors; abar(0) = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;           // beta_t
  std::vector<double> alphas;          // 1 - beta_t
  std::vector<double> alpha_bars;      // prod_{s<=t} alpha_s
  std::vector<double> posterior_vars;  // tilde beta_t (posterior_vars[0] == 0)
  ReverseCovMode cov_mode = ReverseCovMode::tilde_beta_t;

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;       // accepts t = 0
  double posterior_var(int t) const;
  double step_var(int t) const;        // sampler variance per cov_mode
  bool degenerate_step(int t) const { return step_var(t) == 0.0; }

private:
  void check_t(int t, int lo) const;
};

NoiseSchedule make_schedule(int T, double beta_min, double beta_max,
                            ScheduleShape shape = ScheduleShape::linear,
                            ReverseCovMode cov_mode = ReverseCovMode::tilde_beta_t);

// Explicit per-step betas (each in (0,1)); used by tests and the verify module.
NoiseSchedule make_schedule_from_betas(const std::vector<double>& betas,
                                       ReverseCovMode cov_mode = ReverseCovMode::tilde_beta_t);

// Desk-scale default: linear, T = 50, beta in [1e-3, 0.2], tilde covariances.
NoiseSchedule default_schedule();

} // namespace difftune
