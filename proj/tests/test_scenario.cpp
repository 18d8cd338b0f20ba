// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <numbers>

#include "difftune/scenario.hpp"
#include "doctest.h"

using namespace difftune;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

RewardScenario one_dim(RewardKind kind, double tau) {
  RewardScenario s;
  s.name = "line";
  s.d = 1;
  s.prompts = {Prompt{0, 1.0}};
  PromptMixture mix;
  mix.means = {Vec::Zero(1)};
  mix.weights = {1.0};
  mix.var = 1.0;
  s.mixtures = {mix};
  s.targets = {Vec::Zero(1)};
  s.reward_kind = kind;
  s.tau = tau;
  s.validate();
  return s;
}

} // namespace

TEST_SUITE("scenario") {

TEST_CASE("standard scenarios are well-formed") {
  const auto all = standard_scenarios();
  REQUIRE(all.size() == 5);
  CHECK(all[0].name == "hue");
  CHECK(all[1].name == "pair");
  CHECK(all[2].name == "count");
  CHECK(all[3].name == "place");
  CHECK(all[4].name == "multi");
  for (const auto& s : all) {
    CHECK_NOTHROW(s.validate());
    for (int z = 0; z < s.prompt_count(); ++z) {
      double wsum = 0.0;
      for (double w : s.mixtures[z].weights) wsum += w;
      CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
      // The target is one of the component means, so the reward optimum is
      // attainable, and it beats every other mode.
      const double at_target = reward(s, s.targets[z], z);
      bool found = false;
      for (const auto& m : s.mixtures[z].means) {
        if ((m - s.targets[z]).norm() == 0.0) {
          found = true;
          continue;
        }
        CHECK(reward(s, m, z) < at_target);
      }
      CHECK(found);
    }
  }
  const auto& multi = all[4];
  CHECK(multi.prompt_count() == 4);
  for (const auto& p : multi.prompts) CHECK(p.weight == 0.25);
  // Constructors are deterministic.
  CHECK(scenario_hash(all[0]) == scenario_hash(standard_scenarios()[0]));
}

TEST_CASE("reward values: at-target, hand arithmetic, rbf range") {
  const auto hue = scenario_by_name("hue");
  CHECK(reward(hue, hue.targets[0], 0) == doctest::Approx(1.0).epsilon(1e-15));

  // d=1, x0=2, target 0, tau=2, negative squared distance: -4/2 = -2.
  const auto line = one_dim(RewardKind::neg_sq_dist, 2.0);
  Vec x(1);
  x << 2.0;
  CHECK(reward(line, x, 0) == doctest::Approx(-2.0).epsilon(1e-15));

  const auto rbf = one_dim(RewardKind::rbf, 1.0);
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double r = reward(rbf, 3.0 * rng.normal_vec(1), 0);
    CHECK(r > 0.0);
    CHECK(r <= 1.0);
  }
  CHECK_THROWS_AS(reward(hue, hue.targets[0], 1), IndexError);
  CHECK_THROWS_AS(reward(hue, Vec::Zero(3), 0), ConfigError);
}

TEST_CASE("quality is the exact mixture log-density") {
  // Single unit-variance component, evaluated at its mean.
  const auto line = one_dim(RewardKind::rbf, 1.0);
  CHECK(quality(line, Vec::Zero(1), 0) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

  // Two equal components symmetric about the probe point.
  RewardScenario two = line;
  Vec m0(1), m1(1);
  m0 << -1.0;
  m1 << 1.0;
  two.mixtures[0].means = {m0, m1};
  two.mixtures[0].weights = {0.5, 0.5};
  two.targets = {m1};
  two.validate();
  const double dens = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
  CHECK(quality(two, Vec::Zero(1), 0) ==
        doctest::Approx(std::log(dens)).epsilon(1e-12));

  // Permuting equal-weight components changes nothing.
  RewardScenario swapped = two;
  swapped.mixtures[0].means = {m1, m0};
  swapped.targets = {m1};
  Vec probe(1);
  probe << 0.37;
  CHECK(quality(two, probe, 0) ==
        doctest::Approx(quality(swapped, probe, 0)).epsilon(1e-14));
}

TEST_CASE("quality integrates to one") {
  // Importance sampling from a wide Gaussian proposal over the hue mixture.
  const auto hue = scenario_by_name("hue");
  Rng rng(9);
  const double qvar = 4.0;
  const long n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (long i = 0; i < n; ++i) {
    const Vec x = std::sqrt(qvar) * rng.normal_vec(2);
    const double log_q = -x.squaredNorm() / (2.0 * qvar) -
                         std::log(2.0 * std::numbers::pi * qvar);
    const double w = std::exp(quality(hue, x, 0) - log_q);
    sum += w;
    sum_sq += w * w;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  CHECK(std::abs(mean - 1.0) <= 3.0 * se);
}

TEST_CASE("sampled data matches the mixture moments") {
  const auto pair = scenario_by_name("pair");
  const auto& mix = pair.mixtures[0];
  Vec expect_mean = Vec::Zero(2);
  for (std::size_t i = 0; i < mix.means.size(); ++i)
    expect_mean += mix.weights[i] * mix.means[i];

  Rng rng(10);
  const long n = 50000;
  Vec sum = Vec::Zero(2), sum_sq = Vec::Zero(2);
  for (long i = 0; i < n; ++i) {
    const Vec x = sample_data(pair, 0, rng);
    sum += x;
    sum_sq += x.cwiseProduct(x);
  }
  const Vec mean = sum / n;
  for (int k = 0; k < 2; ++k) {
    const double var = sum_sq[k] / n - mean[k] * mean[k];
    const double se = std::sqrt(var / n);
    CHECK(std::abs(mean[k] - expect_mean[k]) <= 3.0 * se);
  }

  // Prompt draws follow the prompt weights.
  const auto multi = scenario_by_name("multi");
  std::vector<long> counts(4, 0);
  for (long i = 0; i < n; ++i) ++counts[sample_prompt(multi, rng)];
  for (int z = 0; z < 4; ++z)
    CHECK(std::abs(counts[z] / double(n) - 0.25) < 0.02);
}

TEST_CASE("nearest component picks the closest mean") {
  const auto count = scenario_by_name("count");
  const auto& mix = count.mixtures[0];
  for (std::size_t i = 0; i < mix.means.size(); ++i)
    CHECK(nearest_component(mix, mix.means[i]) == static_cast<int>(i));
  CHECK(nearest_component(mix, v2(0.9, 1.2)) ==
        nearest_component(mix, v2(1.1, 0.8)));
}

TEST_CASE("biased scenario hides the rewarded mode in the tail") {
  const auto s = biased_scenario();
  REQUIRE(s.prompt_count() == 1);
  REQUIRE(s.mixtures[0].weights.size() == 2);
  CHECK(s.mixtures[0].weights[0] == 0.9);
  CHECK(s.mixtures[0].weights[1] == 0.1);
  CHECK((s.targets[0] - s.mixtures[0].means[1]).norm() == 0.0);
  CHECK(reward(s, s.mixtures[0].means[0], 0) < reward(s, s.targets[0], 0));
  CHECK(scenario_by_name("biased").name == "biased");
}

TEST_CASE("json round-trip preserves the scenario and its hash") {
  const auto place = scenario_by_name("place");
  nlohmann::json j = place;
  const RewardScenario back = j.get<RewardScenario>();
  CHECK(back.name == place.name);
  CHECK(back.d == place.d);
  CHECK(back.tau == place.tau);
  CHECK(back.reward_kind == place.reward_kind);
  REQUIRE(back.mixtures.size() == place.mixtures.size());
  CHECK(back.mixtures[0].var == place.mixtures[0].var);
  CHECK((back.targets[0] - place.targets[0]).norm() == 0.0);
  CHECK(scenario_hash(back) == scenario_hash(place));

  const std::string path = "test_scenario_roundtrip.json";
  save_scenario(path, place);
  const RewardScenario loaded = load_scenario(path);
  CHECK(scenario_hash(loaded) == scenario_hash(place));
  std::remove(path.c_str());

  // The hash is sensitive to the pieces that change the task.
  RewardScenario warm = place;
  warm.tau = 2.0;
  CHECK(scenario_hash(warm) != scenario_hash(place));
  RewardScenario moved = place;
  moved.mixtures[0].means[0][0] += 0.25;
  CHECK(scenario_hash(moved) != scenario_hash(place));
}

TEST_CASE("validation rejects malformed scenarios") {
  RewardScenario s = scenario_by_name("hue");
  s.mixtures[0].weights = {0.6, 0.6};
  CHECK_THROWS_AS(s.validate(), ConfigError);

  RewardScenario t = scenario_by_name("hue");
  t.targets[0] = v2(0.123, 0.456);  // not a component mean
  CHECK_THROWS_AS(t.validate(), ConfigError);

  RewardScenario u = scenario_by_name("hue");
  u.tau = 0.0;
  CHECK_THROWS_AS(u.validate(), ConfigError);

  CHECK_THROWS_AS(scenario_by_name("nope"), LookupError);
}

} // TEST_SUITE
