// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "difftune/denoiser.hpp"
#include "difftune/diffusion.hpp"
#include "difftune/metrics.hpp"
#include "difftune/scenario.hpp"

namespace difftune {

// Regularizer attached to the reward-weighted loss.
//   none  w = max(r, 0),         loss = w ||x0 - f||^2 / (2 var_t)
//   kl_d  w = max(r + gamma, 0), loss = w ||x0 - f||^2 / (2 var_t)
//   kl_o  loss = (r ||x0 - f||^2 + gamma ||f_pre - f||^2) / (2 var_t),
//         sample skipped entirely when r + gamma < 0
// where f is the predicted x0 at a resampled (t, x_t) and var_t is the
// posterior variance at t (t ranges over {2..T} so var_t > 0).
enum class KLRegMode { none, kl_d, kl_o };

struct SFTConfig {
  double gamma = 2.0;
  KLRegMode kl_mode = KLRegMode::kl_d;
  long dataset_size = 20000;
  int batch = 128;
  long steps = 2000;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  long eval_every = 0;  // 0: single eval row at the end
  int eval_rollouts = 64;
  int kl_eval_trajs = 4;
  X0PredMode x0_mode = X0PredMode::standard;

  void validate() const;
};

struct SFTRecord {
  Vec x0;
  int z = 0;
  double reward = 0.0;
};

// Frozen rollout corpus scored once by the reward model.
struct SFTDataset {
  std::vector<SFTRecord> records;
  std::uint64_t seed = 0;
  std::string scenario_hash;

  long size() const { return static_cast<long>(records.size()); }
};

// `size` trajectories from the frozen model, keeping (x0, z, r).
SFTDataset build_dataset(const Denoiser& den, const Vec& params,
                         const NoiseSchedule& sched,
                         const RewardScenario& scenario, long size,
                         std::uint64_t seed);

// JSONL: one header line {"M","seed","scenario_hash"}, then one record
// object {"x0","z","r"} per line.
void save_dataset(const std::string& path, const SFTDataset& ds);
SFTDataset load_dataset(const std::string& path);

double filtered_weight(double r, double gamma);  // max(r + gamma, 0)

struct SftSampleTerms {
  double loss = 0.0;
  bool skipped = false;
};

// Loss at an externally supplied (t, x_t) corruption of rec.x0; accumulates
// d(loss)/d(params) when grad is given.
SftSampleTerms sft_sample_loss(const Denoiser& den, const Vec& params,
                               const ParamSnapshot& pre,
                               const NoiseSchedule& sched, const SFTRecord& rec,
                               int t, const Vec& x_t, const SFTConfig& cfg,
                               GradAccumulator* grad = nullptr);

struct SftResult {
  ParamSnapshot snapshot;
  MetricsLog metrics;
  std::vector<std::pair<long, double>> loss_curve;  // (step, mean batch loss)
  bool aborted = false;  // non-finite parameters; snapshot is last-good
  long total_skipped = 0;
};

// Reward-weighted supervised fine-tuning over a frozen dataset: per step one
// minibatch of records, each corrupted at a fresh t in {2..T}; mean loss over
// the non-skipped samples. Eval rows (fresh rollouts + KL to the anchor) land
// every eval_every steps and at the end. Writes metrics.csv and a final
// checkpoint under output_dir when given.
SftResult run_sft(Denoiser& den, const ParamSnapshot& p_pre,
                  const NoiseSchedule& sched, const RewardScenario& scenario,
                  const SFTDataset& ds, const SFTConfig& cfg,
                  const std::string& output_dir = "");

} // namespace difftune
