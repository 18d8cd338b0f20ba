// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/dpok.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace difftune {

void RLConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("rl: alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("rl: beta must be >= 0");
  if (m < 1) throw ConfigError("rl: m must be >= 1");
  if (n < 1) throw ConfigError("rl: n must be >= 1");
  if (grad_steps_per_round < 0)
    throw ConfigError("rl: grad_steps_per_round must be >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("rl: max_grad_norm must be > 0");
  if (total_online_samples < m)
    throw ConfigError("rl: total_online_samples must be >= m");
  if (is_ratio_clamp && !(*is_ratio_clamp >= 1.0))
    throw ConfigError("rl: is_ratio_clamp must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("rl: lr must be > 0");
  if (!(value_lr > 0.0)) throw ConfigError("rl: value_lr must be > 0");
  if (checkpoint_every_rounds < 0)
    throw ConfigError("rl: checkpoint_every_rounds must be >= 0");
  if (kl_metric_trajs < 0) throw ConfigError("rl: kl_metric_trajs must be >= 0");
}

double value_regression_loss(const CondNet& net, const Vec& params,
                             const Vec& x_t, int t, int z, double target,
                             GradAccumulator* grad) {
  Mlp::Trace trace;
  const Vec v = net.forward(params, x_t, t, z, grad ? &trace : nullptr);
  const double diff = v[0] - target;
  if (grad) {
    Vec dout(1);
    dout[0] = 2.0 * diff;
    net.backward(params, trace, dout, grad->grads);
    grad->note_sample();
  }
  return diff * diff;
}

ValueBaseline::ValueBaseline(int d, int T, int prompt_count, std::uint64_t seed,
                             double lr, std::vector<int> hidden)
    : net_([&] {
        CondNetSpec spec;
        spec.d = d;
        spec.T = T;
        spec.prompt_count = prompt_count;
        spec.out_dim = 1;
        spec.hidden = std::move(hidden);
        return CondNet(spec);
      }()),
      params_(Vec::Zero(net_.param_count())),
      opt_(net_.param_count(), AdamW::Opts{.lr = lr}) {
  Rng rng(seed);
  params_ = net_.init_params(rng);
}

double ValueBaseline::value(const Vec& x_t, int t, int z) const {
  return net_.forward(params_, x_t, t, z)[0];
}

void ValueBaseline::fit_batch(const std::vector<const Transition*>& batch) {
  if (batch.empty()) return;
  GradAccumulator acc(net_.param_count());
  for (const Transition* tr : batch)
    value_regression_loss(net_, params_, tr->x_t, tr->t, tr->z, tr->reward, &acc);
  acc.ensure_finite();
  Vec g = acc.grads / static_cast<double>(batch.size());
  opt_.step(params_, g);
}

PgLossTerms pg_loss(const Denoiser& den, const Vec& params,
                    const ParamSnapshot& pre, const NoiseSchedule& sched,
                    const Transition& tr, const RLConfig& cfg,
                    double baseline_value, GradAccumulator* grad,
                    std::optional<double> frozen_is_ratio) {
  const double var = sched.step_var(tr.t);
  if (!(var > 0.0))
    throw DomainError("pg_loss: degenerate step t=" + std::to_string(tr.t) +
                      " has sigma_t == 0");

  Mlp::Trace trace;
  const Vec eps = den.forward(params, tr.x_t, tr.t, tr.z, grad ? &trace : nullptr);
  const double k = sched.beta(tr.t) / std::sqrt(1.0 - sched.alpha_bar(tr.t));
  const double sa = std::sqrt(sched.alpha(tr.t));
  const Vec mu = (tr.x_t - k * eps) / sa;

  PgLossTerms out;
  out.logprob = gaussian_step_logprob(tr.x_prev, mu, var);

  if (frozen_is_ratio) {
    out.is_ratio = *frozen_is_ratio;
  } else {
    out.is_ratio = std::exp(out.logprob - tr.behavior_logprob);
    if (!std::isfinite(out.is_ratio)) {
      out.discarded = true;
      out.is_ratio = 0.0;
      out.loss = 0.0;
      return out;
    }
    if (cfg.is_ratio_clamp)
      out.is_ratio = std::clamp(out.is_ratio, 1.0 / *cfg.is_ratio_clamp,
                                *cfg.is_ratio_clamp);
  }

  Vec mu_pre;
  if (cfg.beta != 0.0) {
    const Vec eps_pre = den.forward(pre.params, tr.x_t, tr.t, tr.z);
    mu_pre = (tr.x_t - k * eps_pre) / sa;
    out.kl = stepwise_gaussian_kl(mu, mu_pre, var);
  }

  const double coeff = out.is_ratio * (-cfg.alpha * (tr.reward - baseline_value));
  out.loss = coeff * out.logprob + cfg.beta * out.kl;

  if (grad) {
    Vec dmu = coeff * (tr.x_prev - mu) / var;
    if (cfg.beta != 0.0) dmu += cfg.beta * (mu - mu_pre) / var;
    const Vec deps = dmu * (-k / sa);
    den.net.backward(params, trace, deps, grad->grads);
    grad->note_sample();
  }
  return out;
}

namespace {

struct RolloutStats {
  Trajectory traj;
  double kl_sum = 0.0;  // vs. anchor, when requested
};

// Reverse rollout that optionally accumulates the stepwise KL against an
// anchor parameter vector as it goes (degenerate steps excluded).
RolloutStats rollout_with_kl(const Denoiser& den, const Vec& params,
                             const Vec* anchor, const NoiseSchedule& sched,
                             int z, Rng& rng) {
  RolloutStats out;
  const int T = sched.T;
  const int d = den.d();
  out.traj.prompt = z;
  out.traj.behavior_params_version = den.version;
  out.traj.states.reserve(T + 1);
  out.traj.step_logprobs.reserve(T);
  out.traj.states.push_back(rng.normal_vec(d));
  for (int t = T; t >= 1; --t) {
    const Vec& x_t = out.traj.states.back();
    const Vec noise = rng.normal_vec(d);
    const Vec eps = den.forward(params, x_t, t, z);
    const double k = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    const double sa = std::sqrt(sched.alpha(t));
    Vec mu = (x_t - k * eps) / sa;
    const double var = sched.step_var(t);
    if (anchor && var > 0.0) {
      const Vec eps_pre = den.forward(*anchor, x_t, t, z);
      const Vec mu_pre = (x_t - k * eps_pre) / sa;
      out.kl_sum += stepwise_gaussian_kl(mu, mu_pre, var);
    }
    double lp = 0.0;
    Vec x_prev;
    if (var > 0.0) {
      x_prev = mu + std::sqrt(var) * noise;
      lp = gaussian_step_logprob(x_prev, mu, var);
    } else {
      x_prev = std::move(mu);
    }
    if (!x_prev.allFinite())
      throw RolloutError("rollout produced a non-finite state at step t=" +
                         std::to_string(t), t);
    out.traj.states.push_back(std::move(x_prev));
    out.traj.step_logprobs.push_back(lp);
  }
  return out;
}

} // namespace

double estimate_kl_to_pretrained(const Denoiser& den, const Vec& params,
                                 const ParamSnapshot& pre,
                                 const NoiseSchedule& sched,
                                 const RewardScenario& scenario, int n_traj,
                                 Rng& rng) {
  if (n_traj < 1) throw ConfigError("kl estimate: n_traj must be >= 1");
  double acc = 0.0;
  for (int i = 0; i < n_traj; ++i) {
    const int z = sample_prompt(scenario, rng);
    acc += rollout_with_kl(den, params, &pre.params, sched, z, rng).kl_sum;
  }
  return acc / n_traj;
}

DpokResult run_dpok(Denoiser& den, const ParamSnapshot& p_pre,
                    const NoiseSchedule& sched, const RewardScenario& scenario,
                    const RLConfig& cfg, const std::string& output_dir) {
  cfg.validate();
  scenario.validate();
  if (scenario.prompt_count() != den.prompt_count())
    throw ConfigError("rl: scenario prompt_count does not match denoiser");
  if (p_pre.params.size() != den.param_count())
    throw ConfigError("rl: pretrained snapshot size mismatch");

  const bool with_baseline = cfg.baseline_enabled(scenario.prompt_count());
  Rng rng(cfg.seed);
  AdamW opt(den.param_count(), AdamW::Opts{.lr = cfg.lr});
  GradAccumulator acc(den.param_count());
  std::optional<ValueBaseline> baseline;
  if (with_baseline)
    baseline.emplace(den.d(), den.T(), den.prompt_count(), rng.fork(9001).seed(),
                     cfg.value_lr);

  if (!output_dir.empty()) std::filesystem::create_directories(output_dir);

  DpokResult result;
  result.snapshot = make_snapshot(den);  // last-good
  const long rounds = cfg.total_online_samples / cfg.m;
  long samples_consumed = 0;

  for (long round = 0; round < rounds; ++round) {
    // Fresh on-policy rollouts.
    std::vector<Trajectory> trajs;
    trajs.reserve(cfg.m);
    double reward_sum = 0.0, quality_sum = 0.0, kl_sum = 0.0;
    int kl_scored = 0;
    for (int i = 0; i < cfg.m; ++i) {
      const int z = sample_prompt(scenario, rng);
      const bool score_kl = i < cfg.kl_metric_trajs;
      RolloutStats rs = rollout_with_kl(den, den.params,
                                        score_kl ? &p_pre.params : nullptr,
                                        sched, z, rng);
      rs.traj.reward = reward(scenario, rs.traj.x0(), z);
      reward_sum += *rs.traj.reward;
      quality_sum += quality(scenario, rs.traj.x0(), z);
      if (score_kl) {
        kl_sum += rs.kl_sum;
        ++kl_scored;
      }
      trajs.push_back(std::move(rs.traj));
    }
    samples_consumed += cfg.m;

    // Buffer of non-degenerate transitions.
    std::vector<Transition> buffer;
    buffer.reserve(static_cast<std::size_t>(cfg.m) * sched.T);
    for (const auto& tr : trajs) {
      for (int t = sched.T; t >= 1; --t) {
        if (sched.degenerate_step(t)) continue;
        Transition x;
        x.x_t = tr.state(t);
        x.x_prev = tr.state(t - 1);
        x.t = t;
        x.z = tr.prompt;
        x.reward = *tr.reward;
        x.behavior_logprob = tr.logprob_at(t);
        buffer.push_back(std::move(x));
      }
    }

    long round_discards = 0;
    double grad_norm_sum = 0.0;
    for (int gs = 0; gs < cfg.grad_steps_per_round; ++gs) {
      acc.reset();
      for (int i = 0; i < cfg.n; ++i) {
        const Transition& tr = buffer[rng.uniform_int(buffer.size())];
        const double b = baseline ? baseline->value(tr.x_t, tr.t, tr.z) : 0.0;
        const PgLossTerms terms =
            pg_loss(den, den.params, p_pre, sched, tr, cfg, b, &acc);
        if (terms.discarded) ++round_discards;
      }
      acc.ensure_finite();
      Vec g = acc.grads;  // loss summed over the n transitions
      grad_norm_sum += clip_grad_norm(g, cfg.max_grad_norm);
      opt.step(den.params, g);
      ++den.version;
    }
    result.total_is_discards += round_discards;

    // Refit the baseline on this round's transitions.
    if (baseline) {
      for (int gs = 0; gs < cfg.grad_steps_per_round; ++gs) {
        std::vector<const Transition*> batch;
        batch.reserve(cfg.n);
        for (int i = 0; i < cfg.n; ++i)
          batch.push_back(&buffer[rng.uniform_int(buffer.size())]);
        baseline->fit_batch(batch);
      }
    }

    MetricsRow row;
    row.round = round;
    row.samples_consumed = samples_consumed;
    row.mean_reward = reward_sum / cfg.m;
    row.mean_quality = quality_sum / cfg.m;
    row.kl_estimate = kl_scored > 0 ? kl_sum / kl_scored : 0.0;
    row.grad_norm = cfg.grad_steps_per_round > 0
                        ? grad_norm_sum / cfg.grad_steps_per_round
                        : 0.0;
    row.is_discards = round_discards;
    result.metrics.rows.push_back(row);

    if (!den.params.allFinite()) {
      // Abort; result keeps the last-good snapshot.
      result.aborted = true;
      break;
    }
    result.snapshot = make_snapshot(den);

    if (!output_dir.empty() && cfg.checkpoint_every_rounds > 0 &&
        (round + 1) % cfg.checkpoint_every_rounds == 0) {
      save_checkpoint(output_dir + "/checkpoint_round_" + std::to_string(round + 1) +
                          ".bin", den);
    }
  }

  if (!output_dir.empty()) {
    result.metrics.to_csv(output_dir + "/metrics.csv");
    Denoiser final_den = den;
    final_den.params = result.snapshot.params;
    final_den.version = result.snapshot.version;
    save_checkpoint(output_dir + "/checkpoint_final.bin", final_den);
  }
  return result;
}

} // namespace difftune
