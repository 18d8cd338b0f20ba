// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace difftune {
namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

void check_weights(const std::vector<double>& w, const char* what) {
  if (w.empty()) throw ConfigError(std::string(what) + ": empty weight vector");
  double sum = 0.0;
  for (double x : w) {
    if (!(x >= 0.0)) throw ConfigError(std::string(what) + ": negative weight");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw ConfigError(std::string(what) + ": weights sum to " + std::to_string(sum) +
                      ", expected 1");
}

} // namespace

void RewardScenario::check_prompt(int z) const {
  if (z < 0 || z >= prompt_count())
    throw IndexError("scenario '" + name + "': prompt z=" + std::to_string(z) +
                     " outside [0," + std::to_string(prompt_count()) + ")");
}

void RewardScenario::validate() const {
  if (d < 1) throw ConfigError("scenario: d must be >= 1");
  if (prompts.empty()) throw ConfigError("scenario: prompts must be nonempty");
  if (mixtures.size() != prompts.size() || targets.size() != prompts.size())
    throw ConfigError("scenario: mixtures/targets must match prompt count");
  if (!(tau > 0.0)) throw ConfigError("scenario: tau must be > 0");
  std::vector<double> pw;
  for (const auto& p : prompts) pw.push_back(p.weight);
  check_weights(pw, "scenario prompt weights");
  for (std::size_t z = 0; z < prompts.size(); ++z) {
    const auto& mix = mixtures[z];
    if (mix.means.empty()) throw ConfigError("scenario: mixture has no components");
    if (mix.means.size() != mix.weights.size())
      throw ConfigError("scenario: component means/weights mismatch");
    if (!(mix.var > 0.0)) throw ConfigError("scenario: component var must be > 0");
    check_weights(mix.weights, "scenario component weights");
    for (const auto& m : mix.means)
      if (m.size() != d) throw ConfigError("scenario: component mean has wrong dimension");
    if (targets[z].size() != d)
      throw ConfigError("scenario: target has wrong dimension");
    bool on_mode = false;
    for (const auto& m : mix.means)
      if ((m - targets[z]).norm() == 0.0) on_mode = true;
    if (!on_mode)
      throw ConfigError("scenario '" + name + "': target for prompt " +
                        std::to_string(z) + " does not equal a component mean");
  }
}

double reward(const RewardScenario& s, const Vec& x0, int z) {
  s.check_prompt(z);
  if (x0.size() != s.d) throw ConfigError("reward: x0 has wrong dimension");
  const double q = (x0 - s.targets[z]).squaredNorm() / s.tau;
  return s.reward_kind == RewardKind::neg_sq_dist ? -q : std::exp(-q);
}

double quality(const RewardScenario& s, const Vec& x0, int z) {
  s.check_prompt(z);
  if (x0.size() != s.d) throw ConfigError("quality: x0 has wrong dimension");
  const auto& mix = s.mixtures[z];
  const double log_norm = -0.5 * s.d * std::log(2.0 * M_PI * mix.var);
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(mix.means.size());
  for (std::size_t i = 0; i < mix.means.size(); ++i) {
    terms[i] = (mix.weights[i] > 0.0 ? std::log(mix.weights[i])
                                     : -std::numeric_limits<double>::infinity()) +
               log_norm - (x0 - mix.means[i]).squaredNorm() / (2.0 * mix.var);
    max_term = std::max(max_term, terms[i]);
  }
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - max_term);
  return max_term + std::log(acc);
}

Vec sample_data(const RewardScenario& s, int z, Rng& rng) {
  s.check_prompt(z);
  const auto& mix = s.mixtures[z];
  const int k = rng.categorical(mix.weights);
  return mix.means[k] + std::sqrt(mix.var) * rng.normal_vec(s.d);
}

int sample_prompt(const RewardScenario& s, Rng& rng) {
  std::vector<double> pw;
  for (const auto& p : s.prompts) pw.push_back(p.weight);
  return rng.categorical(pw);
}

int nearest_component(const PromptMixture& mix, const Vec& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mix.means.size(); ++i) {
    const double dist = (x - mix.means[i]).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(i);
    }
  }
  return best;
}

namespace {

RewardScenario single(const std::string& name, std::vector<Vec> means,
                      std::vector<double> weights, int target_idx) {
  RewardScenario s;
  s.name = name;
  s.d = 2;
  s.prompts = {Prompt{0, 1.0}};
  PromptMixture mix;
  mix.means = std::move(means);
  mix.weights = std::move(weights);
  mix.var = 0.0625;
  s.targets = {mix.means[target_idx]};
  s.mixtures = {std::move(mix)};
  s.validate();
  return s;
}

} // namespace

RewardScenario biased_scenario() {
  // 0.9 of the data mass sits on the non-rewarded mode.
  return single("biased", {v2(-1, 0), v2(1, 0)}, {0.9, 0.1}, 1);
}

std::vector<RewardScenario> standard_scenarios() {
  std::vector<RewardScenario> out;
  out.push_back(single("hue", {v2(-1, 0), v2(1, 0)}, {0.5, 0.5}, 1));
  out.push_back(single("pair", {v2(0, 1), v2(-1, -1), v2(1, -1)}, {0.4, 0.3, 0.3}, 0));
  out.push_back(single("count", {v2(-1, -1), v2(-1, 1), v2(1, -1), v2(1, 1)},
                       {0.25, 0.25, 0.25, 0.25}, 3));
  out.push_back(single("place", {v2(0, -1), v2(0, 1)}, {0.6, 0.4}, 1));

  RewardScenario multi;
  multi.name = "multi";
  multi.d = 2;
  for (int z = 0; z < 4; ++z) {
    multi.prompts.push_back(Prompt{z, 0.25});
    multi.mixtures.push_back(out[z].mixtures[0]);
    multi.targets.push_back(out[z].targets[0]);
  }
  multi.validate();
  out.push_back(std::move(multi));
  return out;
}

RewardScenario scenario_by_name(const std::string& name) {
  if (name == "biased") return biased_scenario();
  for (auto& s : standard_scenarios())
    if (s.name == name) return s;
  throw LookupError("unknown scenario '" + name + "'");
}

void to_json(nlohmann::json& j, const RewardScenario& s) {
  j = nlohmann::json::object();
  j["name"] = s.name;
  j["d"] = s.d;
  j["reward_kind"] = s.reward_kind == RewardKind::rbf ? "rbf" : "neg_sq_dist";
  j["tau"] = s.tau;
  auto prompts = nlohmann::json::array();
  for (std::size_t z = 0; z < s.prompts.size(); ++z) {
    nlohmann::json p;
    p["id"] = s.prompts[z].id;
    p["weight"] = s.prompts[z].weight;
    auto means = nlohmann::json::array();
    for (const auto& m : s.mixtures[z].means)
      means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
    p["means"] = means;
    p["component_weights"] = s.mixtures[z].weights;
    p["var"] = s.mixtures[z].var;
    p["target"] = std::vector<double>(s.targets[z].data(),
                                      s.targets[z].data() + s.targets[z].size());
    prompts.push_back(p);
  }
  j["prompts"] = prompts;
}

void from_json(const nlohmann::json& j, RewardScenario& s) {
  try {
    s = RewardScenario{};
    s.name = j.at("name").get<std::string>();
    s.d = j.at("d").get<int>();
    const auto kind = j.at("reward_kind").get<std::string>();
    if (kind == "rbf")
      s.reward_kind = RewardKind::rbf;
    else if (kind == "neg_sq_dist")
      s.reward_kind = RewardKind::neg_sq_dist;
    else
      throw ConfigError("scenario: reward_kind must be rbf or neg_sq_dist");
    s.tau = j.at("tau").get<double>();
    for (const auto& p : j.at("prompts")) {
      Prompt prompt;
      prompt.id = p.at("id").get<int>();
      prompt.weight = p.at("weight").get<double>();
      s.prompts.push_back(prompt);
      PromptMixture mix;
      for (const auto& m : p.at("means")) {
        const auto vals = m.get<std::vector<double>>();
        mix.means.push_back(Eigen::Map<const Vec>(vals.data(), vals.size()));
      }
      mix.weights = p.at("component_weights").get<std::vector<double>>();
      mix.var = p.at("var").get<double>();
      s.mixtures.push_back(std::move(mix));
      const auto tv = p.at("target").get<std::vector<double>>();
      s.targets.push_back(Eigen::Map<const Vec>(tv.data(), tv.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario json: ") + e.what());
  }
  s.validate();
}

RewardScenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("scenario: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: bad json in ") + path + ": " + e.what());
  }
  return j.get<RewardScenario>();
}

void save_scenario(const std::string& path, const RewardScenario& s) {
  std::ofstream out(path);
  if (!out) throw ConfigError("scenario: cannot open " + path + " for writing");
  nlohmann::json j = s;
  out << j.dump(2) << "\n";
}

std::string scenario_hash(const RewardScenario& s) {
  nlohmann::json j = s;
  const std::string dump = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

} // namespace difftune
