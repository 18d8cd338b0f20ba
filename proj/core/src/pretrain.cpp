// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/pretrain.hpp"

#include <cmath>

#include "difftune/metrics.hpp"
#include "difftune/optimizer.hpp"

namespace difftune {

void PretrainConfig::validate() const {
  if (steps < 0) throw ConfigError("pretrain: steps must be >= 0");
  if (batch < 1) throw ConfigError("pretrain: batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("pretrain: lr must be > 0");
  if (log_every < 1) throw ConfigError("pretrain: log_every must be >= 1");
}

double denoising_residual(const Vec& noise, const Vec& eps_pred) {
  if (noise.size() != eps_pred.size())
    throw ConfigError("denoising residual: dimension mismatch");
  return (noise - eps_pred).squaredNorm();
}

double denoising_loss(const Denoiser& den, const Vec& params,
                      const NoiseSchedule& sched, const Vec& x0, int z, int t,
                      const Vec& noise, GradAccumulator* grad) {
  const Vec x_t = q_sample(sched, x0, t, noise);
  Mlp::Trace trace;
  const Vec eps = den.forward(params, x_t, t, z, grad ? &trace : nullptr);
  const double loss = denoising_residual(noise, eps);
  if (grad) {
    const Vec dout = 2.0 * (eps - noise);
    den.net.backward(params, trace, dout, grad->grads);
    grad->note_sample();
  }
  return loss;
}

ParamSnapshot pretrain(Denoiser& den, const NoiseSchedule& sched,
                       const RewardScenario& scenario, const PretrainConfig& cfg,
                       std::vector<std::pair<long, double>>* loss_curve) {
  cfg.validate();
  scenario.validate();
  if (scenario.prompt_count() != den.prompt_count())
    throw ConfigError("pretrain: scenario prompt_count does not match denoiser");
  if (scenario.d != den.d())
    throw ConfigError("pretrain: scenario d does not match denoiser");

  Rng rng(cfg.seed);
  AdamW opt(den.param_count(), AdamW::Opts{.lr = cfg.lr});
  GradAccumulator acc(den.param_count());
  std::vector<std::pair<long, double>> curve;

  for (int step = 0; step < cfg.steps; ++step) {
    acc.reset();
    double loss_sum = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const int z = sample_prompt(scenario, rng);
      const Vec x0 = sample_data(scenario, z, rng);
      const int t = 1 + static_cast<int>(rng.uniform_int(sched.T));
      const Vec noise = rng.normal_vec(scenario.d);
      loss_sum += denoising_loss(den, den.params, sched, x0, z, t, noise, &acc);
    }
    const double mean_loss = loss_sum / cfg.batch;
    if (!std::isfinite(mean_loss))
      throw TrainingError("pretrain: loss diverged at step " + std::to_string(step));
    acc.ensure_finite();
    Vec g = acc.grads / cfg.batch;
    opt.step(den.params, g);
    ++den.version;
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
      curve.emplace_back(step, mean_loss);
  }

  if (!cfg.loss_csv_path.empty()) write_loss_csv(cfg.loss_csv_path, curve);
  if (loss_curve) *loss_curve = std::move(curve);
  return make_snapshot(den);
}

} // namespace difftune
