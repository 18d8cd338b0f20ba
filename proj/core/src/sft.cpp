// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/sft.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "difftune/dpok.hpp"
#include "difftune/optimizer.hpp"

namespace difftune {

void SFTConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("sft: gamma must be >= 0");
  if (batch < 1) throw ConfigError("sft: batch must be >= 1");
  if (dataset_size < batch)
    throw ConfigError("sft: dataset_size must be >= batch");
  if (steps < 0) throw ConfigError("sft: steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("sft: lr must be > 0");
  if (eval_every < 0) throw ConfigError("sft: eval_every must be >= 0");
  if (eval_rollouts < 1) throw ConfigError("sft: eval_rollouts must be >= 1");
  if (kl_eval_trajs < 1) throw ConfigError("sft: kl_eval_trajs must be >= 1");
}

SFTDataset build_dataset(const Denoiser& den, const Vec& params,
                         const NoiseSchedule& sched,
                         const RewardScenario& scenario, long size,
                         std::uint64_t seed) {
  if (size < 1) throw ConfigError("dataset: size must be >= 1");
  scenario.validate();
  SFTDataset ds;
  ds.seed = seed;
  ds.scenario_hash = scenario_hash(scenario);
  ds.records.reserve(size);
  Rng rng(seed);
  for (long i = 0; i < size; ++i) {
    const int z = sample_prompt(scenario, rng);
    const Trajectory traj = sample_trajectory(den, params, sched, z, rng);
    SFTRecord rec;
    rec.x0 = traj.x0();
    rec.z = z;
    rec.reward = reward(scenario, rec.x0, z);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

void save_dataset(const std::string& path, const SFTDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("dataset: cannot open for write: " + path);
  nlohmann::json header{{"M", ds.size()},
                        {"seed", ds.seed},
                        {"scenario_hash", ds.scenario_hash}};
  out << header.dump() << "\n";
  for (const auto& rec : ds.records) {
    nlohmann::json j{{"x0", std::vector<double>(rec.x0.begin(), rec.x0.end())},
                     {"z", rec.z},
                     {"r", rec.reward}};
    out << j.dump() << "\n";
  }
  if (!out) throw ConfigError("dataset: write failed: " + path);
}

SFTDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("dataset: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("dataset: empty file: " + path);
  const nlohmann::json header = nlohmann::json::parse(line);
  if (!header.contains("M"))
    throw ConfigError("dataset: unrecognized header in " + path);
  SFTDataset ds;
  ds.seed = header.at("seed").get<std::uint64_t>();
  ds.scenario_hash = header.at("scenario_hash").get<std::string>();
  const long size = header.at("M").get<long>();
  ds.records.reserve(size);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    SFTRecord rec;
    const auto coords = j.at("x0").get<std::vector<double>>();
    rec.x0 = Eigen::Map<const Vec>(coords.data(), coords.size());
    rec.z = j.at("z").get<int>();
    rec.reward = j.at("r").get<double>();
    ds.records.push_back(std::move(rec));
  }
  if (ds.size() != size)
    throw ConfigError("dataset: header promises " + std::to_string(size) +
                      " records, file holds " + std::to_string(ds.size()));
  return ds;
}

double filtered_weight(double r, double gamma) {
  return std::max(r + gamma, 0.0);
}

SftSampleTerms sft_sample_loss(const Denoiser& den, const Vec& params,
                               const ParamSnapshot& pre,
                               const NoiseSchedule& sched, const SFTRecord& rec,
                               int t, const Vec& x_t, const SFTConfig& cfg,
                               GradAccumulator* grad) {
  if (t < 2 || t > sched.T)
    throw IndexError("sft loss: t must lie in {2..T}, got " + std::to_string(t));
  SftSampleTerms out;
  if (cfg.kl_mode == KLRegMode::kl_o && rec.reward + cfg.gamma < 0.0) {
    out.skipped = true;
    return out;
  }
  const double var = sched.posterior_var(t);

  Mlp::Trace trace;
  const Vec eps = den.forward(params, x_t, t, rec.z, grad ? &trace : nullptr);
  const Vec f = x0_from_eps(sched, x_t, eps, t, cfg.x0_mode);

  Vec dl_df = Vec::Zero(f.size());
  if (cfg.kl_mode == KLRegMode::kl_o) {
    const Vec eps_pre = den.forward(pre.params, x_t, t, rec.z);
    const Vec f_pre = x0_from_eps(sched, x_t, eps_pre, t, cfg.x0_mode);
    out.loss = (rec.reward * (f - rec.x0).squaredNorm() +
                cfg.gamma * (f_pre - f).squaredNorm()) /
               (2.0 * var);
    if (grad)
      dl_df = (rec.reward * (f - rec.x0) + cfg.gamma * (f - f_pre)) / var;
  } else {
    const double g = cfg.kl_mode == KLRegMode::kl_d ? cfg.gamma : 0.0;
    const double w = filtered_weight(rec.reward, g);
    out.loss = w * (f - rec.x0).squaredNorm() / (2.0 * var);
    if (grad) dl_df = w * (f - rec.x0) / var;
  }

  if (grad) {
    const Vec dout = dl_df * x0_from_eps_deps(sched, t, cfg.x0_mode);
    den.net.backward(params, trace, dout, grad->grads);
    grad->note_sample();
  }
  return out;
}

namespace {

MetricsRow sft_eval_row(const Denoiser& den, const ParamSnapshot& p_pre,
                        const NoiseSchedule& sched,
                        const RewardScenario& scenario, const SFTConfig& cfg,
                        long step, long skipped_in_window,
                        double mean_grad_norm, Rng& rng) {
  MetricsRow row;
  row.round = step;
  row.samples_consumed = step * cfg.batch;
  double r_sum = 0.0, q_sum = 0.0;
  for (int i = 0; i < cfg.eval_rollouts; ++i) {
    const int z = sample_prompt(scenario, rng);
    const Trajectory traj = sample_trajectory(den, den.params, sched, z, rng);
    r_sum += reward(scenario, traj.x0(), z);
    q_sum += quality(scenario, traj.x0(), z);
  }
  row.mean_reward = r_sum / cfg.eval_rollouts;
  row.mean_quality = q_sum / cfg.eval_rollouts;
  row.kl_estimate = estimate_kl_to_pretrained(den, den.params, p_pre, sched,
                                              scenario, cfg.kl_eval_trajs, rng);
  row.grad_norm = mean_grad_norm;
  row.is_discards = skipped_in_window;
  return row;
}

} // namespace

SftResult run_sft(Denoiser& den, const ParamSnapshot& p_pre,
                  const NoiseSchedule& sched, const RewardScenario& scenario,
                  const SFTDataset& ds, const SFTConfig& cfg,
                  const std::string& output_dir) {
  cfg.validate();
  scenario.validate();
  if (sched.T < 2)
    throw ConfigError("sft: needs T >= 2 (the corruption draws t in {2..T})");
  if (ds.size() < 1) throw ConfigError("sft: dataset is empty");
  if (!ds.scenario_hash.empty() && ds.scenario_hash != scenario_hash(scenario))
    throw ConfigError("sft: dataset was built against a different scenario");
  if (p_pre.params.size() != den.param_count())
    throw ConfigError("sft: pretrained snapshot size mismatch");

  if (!output_dir.empty()) std::filesystem::create_directories(output_dir);

  Rng rng(cfg.seed);
  Rng eval_rng = rng.fork(7102);
  AdamW opt(den.param_count(), AdamW::Opts{.lr = cfg.lr});
  GradAccumulator acc(den.param_count());

  SftResult result;
  result.snapshot = make_snapshot(den);  // last-good
  long window_skipped = 0;
  double window_grad_norm = 0.0;
  long window_steps = 0;

  for (long step = 1; step <= cfg.steps; ++step) {
    acc.reset();
    double loss_sum = 0.0;
    long used = 0;
    for (int i = 0; i < cfg.batch; ++i) {
      const SFTRecord& rec = ds.records[rng.uniform_int(ds.records.size())];
      const int t = 2 + static_cast<int>(rng.uniform_int(sched.T - 1));
      const Vec noise = rng.normal_vec(den.d());
      const Vec x_t = q_sample(sched, rec.x0, t, noise);
      const SftSampleTerms terms =
          sft_sample_loss(den, den.params, p_pre, sched, rec, t, x_t, cfg, &acc);
      if (terms.skipped) {
        ++window_skipped;
        ++result.total_skipped;
      } else {
        loss_sum += terms.loss;
        ++used;
      }
    }
    acc.ensure_finite();
    if (used > 0) {
      result.loss_curve.emplace_back(step, loss_sum / used);
      Vec g = acc.grads / static_cast<double>(used);
      window_grad_norm += g.norm();
      ++window_steps;
      opt.step(den.params, g);
      ++den.version;
    }
    if (!den.params.allFinite()) {
      // Abort; result keeps the last-good snapshot.
      result.aborted = true;
      break;
    }
    result.snapshot = make_snapshot(den);

    const bool at_eval = cfg.eval_every > 0 && step % cfg.eval_every == 0;
    if (at_eval || step == cfg.steps) {
      result.metrics.rows.push_back(sft_eval_row(
          den, p_pre, sched, scenario, cfg, step, window_skipped,
          window_steps > 0 ? window_grad_norm / window_steps : 0.0, eval_rng));
      window_skipped = 0;
      window_grad_norm = 0.0;
      window_steps = 0;
    }
  }

  if (!output_dir.empty()) {
    result.metrics.to_csv(output_dir + "/metrics.csv");
    write_loss_csv(output_dir + "/loss.csv", result.loss_curve);
    Denoiser final_den = den;
    final_den.params = result.snapshot.params;
    final_den.version = result.snapshot.version;
    save_checkpoint(output_dir + "/checkpoint_final.bin", final_den);
  }
  return result;
}

} // namespace difftune
