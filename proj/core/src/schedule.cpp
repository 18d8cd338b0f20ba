// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/schedule.hpp"

#include <string>

namespace difftune {

void NoiseSchedule::check_t(int t, int lo) const {
  if (t < lo || t > T)
    throw IndexError("schedule step t=" + std::to_string(t) + " outside [" +
                     std::to_string(lo) + "," + std::to_string(T) + "]");
}

double NoiseSchedule::beta(int t) const {
  check_t(t, 1);
  return betas[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_t(t, 1);
  return alphas[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t, 0);
  return t == 0 ? 1.0 : alpha_bars[t - 1];
}

double NoiseSchedule::posterior_var(int t) const {
  check_t(t, 1);
  return posterior_vars[t - 1];
}

double NoiseSchedule::step_var(int t) const {
  check_t(t, 1);
  return cov_mode == ReverseCovMode::beta_t ? betas[t - 1] : posterior_vars[t - 1];
}

NoiseSchedule make_schedule_from_betas(const std::vector<double>& betas,
                                       ReverseCovMode cov_mode) {
  if (betas.empty()) throw ConfigError("schedule: betas must be nonempty");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.betas = betas;
  s.cov_mode = cov_mode;
  s.alphas.resize(s.T);
  s.alpha_bars.resize(s.T);
  s.posterior_vars.resize(s.T);
  double abar = 1.0;
  for (int i = 0; i < s.T; ++i) {
    const double b = betas[i];
    if (!(b > 0.0 && b < 1.0))
      throw ConfigError("schedule: beta[" + std::to_string(i + 1) + "]=" +
                        std::to_string(b) + " outside (0,1)");
    const double abar_prev = abar;
    s.alphas[i] = 1.0 - b;
    abar *= s.alphas[i];
    s.alpha_bars[i] = abar;
    s.posterior_vars[i] = b * (1.0 - abar_prev) / (1.0 - abar);
  }
  return s;
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max,
                            ScheduleShape shape, ReverseCovMode cov_mode) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_min > 0.0 && beta_min < 1.0))
    throw ConfigError("schedule: beta_min outside (0,1)");
  if (!(beta_max > 0.0 && beta_max < 1.0))
    throw ConfigError("schedule: beta_max outside (0,1)");
  if (beta_min > beta_max) throw ConfigError("schedule: beta_min > beta_max");
  if (shape != ScheduleShape::linear)
    throw ConfigError("schedule: unknown shape");

  std::vector<double> betas(T);
  if (T == 1) {
    betas[0] = beta_min;
  } else {
    const double step = (beta_max - beta_min) / (T - 1);
    for (int i = 0; i < T; ++i) betas[i] = beta_min + step * i;
  }
  return make_schedule_from_betas(betas, cov_mode);
}

NoiseSchedule default_schedule() {
  return make_schedule(50, 1e-3, 0.2);
}

} // namespace difftune
