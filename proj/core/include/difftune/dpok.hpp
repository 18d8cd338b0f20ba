// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "difftune/denoiser.hpp"
#include "difftune/diffusion.hpp"
#include "difftune/metrics.hpp"
#include "difftune/optimizer.hpp"
#include "difftune/scenario.hpp"

namespace difftune {

struct RLConfig {
  double alpha = 10.0;              // reward weight
  double beta = 0.01;               // KL-to-pretrained weight
  int m = 10;                       // trajectories per sampling round
  int n = 32;                       // transitions per gradient step
  int grad_steps_per_round = 5;
  double max_grad_norm = 0.1;
  long total_online_samples = 20000;
  std::optional<bool> use_baseline; // unset: on iff the scenario has 1 prompt
  std::optional<double> is_ratio_clamp;  // clamp w into [1/c, c]
  double lr = 1e-4;
  double value_lr = 1e-3;
  std::uint64_t seed = 0;
  int checkpoint_every_rounds = 0;  // 0: final checkpoint only
  int kl_metric_trajs = 4;          // rollouts per round scored for the KL column

  void validate() const;
  bool baseline_enabled(int prompt_count) const {
    return use_baseline.value_or(prompt_count == 1);
  }
};

// One reverse-process transition (x_t -> x_{t-1}) taken under the behavior
// policy, with the trajectory's terminal reward attached.
struct Transition {
  Vec x_t, x_prev;
  int t = 0;
  int z = 0;
  double reward = 0.0;
  double behavior_logprob = 0.0;
};

// Scalar value regression ||V(x_t,t,z) - target||^2 with exact gradient.
double value_regression_loss(const CondNet& net, const Vec& params,
                             const Vec& x_t, int t, int z, double target,
                             GradAccumulator* grad = nullptr);

// State-value baseline V(x_t, t, z), fit toward terminal rewards.
class ValueBaseline {
public:
  ValueBaseline(int d, int T, int prompt_count, std::uint64_t seed,
                double lr = 1e-3, std::vector<int> hidden = {32, 32});

  double value(const Vec& x_t, int t, int z) const;
  // One optimizer step of mean squared-error regression over the batch.
  void fit_batch(const std::vector<const Transition*>& batch);

  const CondNet& net() const { return net_; }
  const Vec& params() const { return params_; }

private:
  CondNet net_;
  Vec params_;
  AdamW opt_;
};

struct PgLossTerms {
  double loss = 0.0;
  double is_ratio = 1.0;
  double logprob = 0.0;
  double kl = 0.0;
  bool discarded = false;
};

// Per-transition objective
//   w * (-alpha * (r - b) * log p_theta(x_{t-1}|x_t,z)) + beta * KL_t
// with w = exp(logprob_theta - behavior_logprob) treated as a constant
// (frozen_is_ratio overrides it, e.g. for finite-difference checks) and
// KL_t = ||mu_theta - mu_pre||^2 / (2 sigma_t^2). Gradient flows through the
// log-probability and through mu_theta inside the KL only. A non-finite
// ratio marks the transition discarded: zero loss, no gradient.
PgLossTerms pg_loss(const Denoiser& den, const Vec& params,
                    const ParamSnapshot& pre, const NoiseSchedule& sched,
                    const Transition& tr, const RLConfig& cfg,
                    double baseline_value, GradAccumulator* grad,
                    std::optional<double> frozen_is_ratio = std::nullopt);

// On-policy Monte Carlo estimate of sum_t KL(p_theta(.|x_t,z) || p_pre(.|x_t,z))
// over fresh rollouts, prompts drawn from the scenario; degenerate steps are
// excluded.
double estimate_kl_to_pretrained(const Denoiser& den, const Vec& params,
                                 const ParamSnapshot& pre,
                                 const NoiseSchedule& sched,
                                 const RewardScenario& scenario, int n_traj,
                                 Rng& rng);

struct DpokResult {
  ParamSnapshot snapshot;
  MetricsLog metrics;
  bool aborted = false;        // non-finite parameters; snapshot is last-good
  long total_is_discards = 0;
};

// Online policy-gradient fine-tuning: rounds of m fresh rollouts, then
// grad_steps_per_round clipped steps on n uniformly drawn buffered
// transitions each, with the baseline refit after every round. Writes
// metrics.csv and periodic checkpoints under output_dir when given.
DpokResult run_dpok(Denoiser& den, const ParamSnapshot& p_pre,
                    const NoiseSchedule& sched, const RewardScenario& scenario,
                    const RLConfig& cfg, const std::string& output_dir = "");

} // namespace difftune
