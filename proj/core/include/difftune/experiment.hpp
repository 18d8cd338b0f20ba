// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difftune/dpok.hpp"
#include "difftune/pretrain.hpp"
#include "difftune/scenario.hpp"
#include "difftune/schedule.hpp"
#include "difftune/sft.hpp"

namespace difftune {

enum class Method { dpok, sft, eval_only };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

// Evaluation pass shared by every experiment: fresh rollouts per prompt from
// a frozen checkpoint, scored for reward, quality, KL to the anchor, and
// target-mode mass.
struct EvalConfig {
  int n_eval_rollouts = 200;  // per prompt
  int kl_trajectories = 16;
  std::uint64_t seed = 77;

  void validate() const;
};

struct ExperimentConfig {
  std::string name;
  RewardScenario scenario;
  NoiseSchedule schedule = default_schedule();
  std::vector<int> hidden{64, 64};
  int time_features = 8;
  Method method = Method::eval_only;
  PretrainConfig pretrain;
  RLConfig rl;      // used when method == dpok
  SFTConfig sft;    // used when method == sft
  std::vector<std::uint64_t> seeds{1};
  EvalConfig eval;
  std::string output_dir;  // empty: <DIFFTUNE_OUT or "out">/<name>

  void validate() const;
};

// Config documents are JSON:
//   {"name": ..., "scenario": "hue" | {inline scenario}, "method": "dpok",
//    "schedule": {"T","beta_min","beta_max","cov_mode"}, "model": {"hidden",
//    "time_features"}, "pretrain": {...}, "rl": {...}, "sft": {...},
//    "seeds": [...], "eval": {...}, "output_dir": ...}
// Unknown keys are rejected. Per-method sections may be omitted; the seed
// fields inside rl/sft are overridden by the top-level seeds list.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

// Directory all artifacts land in; applies the DIFFTUNE_OUT default root.
std::string resolve_output_dir(const ExperimentConfig& cfg);

struct PromptEval {
  int prompt = 0;
  double mean_reward = 0.0;
  double mean_quality = 0.0;
  double target_mode_mass = 0.0;  // fraction within rho = 2 sqrt(var) of c_z
};

struct ModelEval {
  double mean_reward = 0.0;   // prompt-weighted
  double mean_quality = 0.0;
  double kl_to_anchor = 0.0;
  double target_mode_mass = 0.0;
  std::vector<PromptEval> per_prompt;
};

struct SeedEval {
  std::uint64_t seed = 0;
  ModelEval eval;
};

struct EvalReport {
  std::string experiment;
  std::string scenario_name;
  std::string scenario_hash;
  std::string method;
  ModelEval pretrained;
  std::vector<SeedEval> seeds;
  ModelEval aggregate;  // coordinate-wise mean over seeds

  void validate() const;  // all metrics finite; aggregates consistent
};

void to_json(nlohmann::json& j, const PromptEval& e);
void from_json(const nlohmann::json& j, PromptEval& e);
void to_json(nlohmann::json& j, const ModelEval& e);
void from_json(const nlohmann::json& j, ModelEval& e);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

EvalReport load_eval_report(const std::string& path);
void save_eval_report(const std::string& path, const EvalReport& r);

ModelEval evaluate_model(const Denoiser& den, const Vec& params,
                         const ParamSnapshot& anchor,
                         const NoiseSchedule& sched,
                         const RewardScenario& scenario, const EvalConfig& cfg);

// Full pipeline: pretrain once, fine-tune per seed (parallel), evaluate
// everything against the pretrained anchor, write metric CSVs, checkpoints,
// SVG plots (reward / quality / KL vs samples consumed), and report.json
// under the output directory. Identical config + seeds give a byte-identical
// report file. Stage failures propagate with the stage name prefixed.
EvalReport run_experiment(const ExperimentConfig& cfg);

// Side-by-side CSV over >= 2 reports of the same scenario: one row per
// metric, one column per report, plus an ordering column of '>'/'='/'<'
// flags between consecutive reports. Scenario mismatch -> ComparisonError.
std::string compare_reports(const std::vector<EvalReport>& reports);
void write_comparison(const std::string& path,
                      const std::vector<EvalReport>& reports);

} // namespace difftune
