// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "difftune/common.hpp"
#include "difftune/rng.hpp"

namespace difftune {

struct Prompt {
  int id = 0;
  double weight = 1.0;
};

// Ground-truth data distribution for one prompt: an isotropic Gaussian
// mixture with a shared per-prompt component variance.
struct PromptMixture {
  std::vector<Vec> means;
  std::vector<double> weights;
  double var = 0.0625;
};

enum class RewardKind { neg_sq_dist, rbf };

// Prompts, their mixtures, and per-prompt reward targets. Every target c_z
// coincides with one component mean of its prompt's mixture, so the reward
// optimum is reachable by the data distribution.
struct RewardScenario {
  std::string name;
  int d = 2;
  std::vector<Prompt> prompts;
  std::vector<PromptMixture> mixtures;  // indexed by prompt id
  std::vector<Vec> targets;             // c_z, indexed by prompt id
  RewardKind reward_kind = RewardKind::rbf;
  double tau = 1.0;

  int prompt_count() const { return static_cast<int>(prompts.size()); }
  void validate() const;
  void check_prompt(int z) const;
};

// neg_sq_dist: -||x0 - c_z||^2 / tau      (unbounded below)
// rbf:          exp(-||x0 - c_z||^2 / tau) in (0, 1]
double reward(const RewardScenario& s, const Vec& x0, int z);

// Exact mixture log-density of x0 under prompt z (log-sum-exp stabilized).
double quality(const RewardScenario& s, const Vec& x0, int z);

Vec sample_data(const RewardScenario& s, int z, Rng& rng);  // x0 ~ mixture z
int sample_prompt(const RewardScenario& s, Rng& rng);
int nearest_component(const PromptMixture& mix, const Vec& x);

// Single-prompt scenario with 0.9 mass on a non-rewarded mode and 0.1 on the
// rewarded one.
RewardScenario biased_scenario();

// Four single-prompt scenarios ("hue", "pair", "count", "place") and one
// four-prompt scenario ("multi", uniform prompt weights) built from them.
std::vector<RewardScenario> standard_scenarios();
RewardScenario scenario_by_name(const std::string& name);  // includes "biased"

void to_json(nlohmann::json& j, const RewardScenario& s);
void from_json(const nlohmann::json& j, RewardScenario& s);
RewardScenario load_scenario(const std::string& path);
void save_scenario(const std::string& path, const RewardScenario& s);

// FNV-1a over the canonical JSON serialization; ties datasets to the
// scenario that produced them.
std::string scenario_hash(const RewardScenario& s);

} // namespace difftune
