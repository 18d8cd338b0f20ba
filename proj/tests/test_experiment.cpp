// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "difftune/experiment.hpp"
#include "doctest.h"

using namespace difftune;
namespace fs = std::filesystem;

namespace {

nlohmann::json minimal_json() {
  return nlohmann::json{{"name", "t"}, {"scenario", "hue"}, {"method", "eval"}};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A self-consistent single-seed report for compare/serialization tests.
EvalReport stub_report(const std::string& name, double reward) {
  PromptEval pe;
  pe.prompt = 0;
  pe.mean_reward = reward;
  pe.mean_quality = -1.0;
  pe.target_mode_mass = 0.5;
  ModelEval me;
  me.mean_reward = reward;
  me.mean_quality = -1.0;
  me.kl_to_anchor = 0.25;
  me.target_mode_mass = 0.5;
  me.per_prompt = {pe};
  EvalReport r;
  r.experiment = name;
  r.scenario_name = "hue";
  r.scenario_hash = scenario_hash(scenario_by_name("hue"));
  r.method = "eval";
  r.pretrained = me;
  r.seeds = {SeedEval{1, me}};
  r.aggregate = me;
  return r;
}

} // namespace

TEST_SUITE("experiment") {

TEST_CASE("method names round-trip and reject strangers") {
  CHECK(method_name(Method::dpok) == "dpok");
  CHECK(method_name(Method::sft) == "sft");
  CHECK(method_name(Method::eval_only) == "eval");
  for (const auto m : {Method::dpok, Method::sft, Method::eval_only})
    CHECK(method_from_name(method_name(m)) == m);
  CHECK_THROWS_AS(method_from_name("ppo"), ConfigError);
}

TEST_CASE("minimal config document fills in the documented defaults") {
  const ExperimentConfig cfg = experiment_from_json(minimal_json());
  CHECK(cfg.name == "t");
  CHECK(cfg.scenario.name == "hue");
  CHECK(cfg.method == Method::eval_only);
  CHECK(cfg.schedule.T == default_schedule().T);
  CHECK(cfg.hidden == std::vector<int>{64, 64});
  CHECK(cfg.time_features == 8);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
  CHECK(cfg.eval.n_eval_rollouts == 200);
  CHECK(cfg.output_dir.empty());
}

TEST_CASE("unknown or missing keys are configuration errors") {
  auto j = minimal_json();
  j["extra"] = 1;
  CHECK_THROWS_AS(experiment_from_json(j), ConfigError);

  for (const char* section : {"schedule", "model", "pretrain", "rl", "sft", "eval"}) {
    auto bad = minimal_json();
    bad[section] = nlohmann::json{{"no_such_key", 1}};
    CAPTURE(section);
    CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  }

  for (const char* required : {"name", "scenario", "method"}) {
    auto bad = minimal_json();
    bad.erase(required);
    CAPTURE(required);
    CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  }

  auto bad_name = minimal_json();
  bad_name["name"] = "no spaces!";
  CHECK_THROWS_AS(experiment_from_json(bad_name), ConfigError);

  auto no_seeds = minimal_json();
  no_seeds["seeds"] = nlohmann::json::array();
  CHECK_THROWS_AS(experiment_from_json(no_seeds), ConfigError);

  auto bad_mode = minimal_json();
  bad_mode["schedule"] = nlohmann::json{{"cov_mode", "diag"}};
  CHECK_THROWS_AS(experiment_from_json(bad_mode), ConfigError);

  auto bad_x0 = minimal_json();
  bad_x0["sft"] = nlohmann::json{{"x0_mode", "weird"}};
  CHECK_THROWS_AS(experiment_from_json(bad_x0), ConfigError);
}

TEST_CASE("every field of a full document lands where it should") {
  const nlohmann::json scen = scenario_by_name("place");
  const nlohmann::json j = {
      {"name", "full"},
      {"scenario", scen},
      {"schedule",
       {{"T", 6}, {"beta_min", 0.01}, {"beta_max", 0.1}, {"cov_mode", "beta_t"}}},
      {"model", {{"hidden", {8, 4}}, {"time_features", 4}}},
      {"method", "dpok"},
      {"pretrain",
       {{"steps", 10}, {"batch", 8}, {"lr", 0.001}, {"seed", 5}, {"log_every", 2}}},
      {"rl",
       {{"alpha", 3.0},
        {"beta", 0.5},
        {"m", 4},
        {"n", 8},
        {"grad_steps_per_round", 2},
        {"max_grad_norm", 1.5},
        {"total_online_samples", 40},
        {"use_baseline", false},
        {"is_ratio_clamp", 4.0},
        {"lr", 0.002},
        {"value_lr", 0.003},
        {"seed", 9},
        {"checkpoint_every_rounds", 2},
        {"kl_metric_trajs", 3}}},
      {"sft",
       {{"gamma", 1.25},
        {"kl_mode", "kl_o"},
        {"dataset_size", 100},
        {"batch", 10},
        {"steps", 20},
        {"lr", 0.0005},
        {"seed", 3},
        {"eval_every", 5},
        {"eval_rollouts", 7},
        {"kl_eval_trajs", 2},
        {"x0_mode", "per_step_alpha"}}},
      {"seeds", {3, 4, 5}},
      {"eval", {{"n_eval_rollouts", 10}, {"kl_trajectories", 2}, {"seed", 42}}},
      {"output_dir", "somewhere"}};

  const ExperimentConfig cfg = experiment_from_json(j);
  CHECK(cfg.name == "full");
  CHECK(cfg.scenario.name == "place");
  CHECK(cfg.scenario.d == 2);
  CHECK(cfg.schedule.T == 6);
  CHECK(cfg.schedule.cov_mode == ReverseCovMode::beta_t);
  CHECK(cfg.schedule.beta(1) == doctest::Approx(0.01));
  CHECK(cfg.hidden == std::vector<int>{8, 4});
  CHECK(cfg.time_features == 4);
  CHECK(cfg.method == Method::dpok);
  CHECK(cfg.pretrain.steps == 10);
  CHECK(cfg.pretrain.log_every == 2);
  CHECK(cfg.rl.alpha == 3.0);
  CHECK(cfg.rl.beta == 0.5);
  CHECK(cfg.rl.m == 4);
  CHECK(cfg.rl.n == 8);
  CHECK(cfg.rl.grad_steps_per_round == 2);
  CHECK(cfg.rl.max_grad_norm == 1.5);
  CHECK(cfg.rl.total_online_samples == 40);
  REQUIRE(cfg.rl.use_baseline.has_value());
  CHECK_FALSE(*cfg.rl.use_baseline);
  REQUIRE(cfg.rl.is_ratio_clamp.has_value());
  CHECK(*cfg.rl.is_ratio_clamp == 4.0);
  CHECK(cfg.rl.lr == 0.002);
  CHECK(cfg.rl.value_lr == 0.003);
  CHECK(cfg.rl.checkpoint_every_rounds == 2);
  CHECK(cfg.rl.kl_metric_trajs == 3);
  CHECK(cfg.sft.gamma == 1.25);
  CHECK(cfg.sft.kl_mode == KLRegMode::kl_o);
  CHECK(cfg.sft.dataset_size == 100);
  CHECK(cfg.sft.x0_mode == X0PredMode::per_step_alpha);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4, 5});
  CHECK(cfg.eval.n_eval_rollouts == 10);
  CHECK(cfg.eval.seed == 42);
  CHECK(cfg.output_dir == "somewhere");
}

TEST_CASE("config files load, and malformed JSON is rejected with context") {
  const std::string good = "test_exp_cfg.json";
  {
    std::ofstream out(good);
    out << minimal_json().dump();
  }
  const ExperimentConfig cfg = load_experiment_config(good);
  CHECK(cfg.name == "t");
  std::remove(good.c_str());

  const std::string bad = "test_exp_cfg_bad.json";
  {
    std::ofstream out(bad);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_experiment_config(bad), ConfigError);
  std::remove(bad.c_str());
  CHECK_THROWS_AS(load_experiment_config("test_exp_missing.json"), ConfigError);
}

TEST_CASE("output directory resolution: explicit, env root, default root") {
  ExperimentConfig cfg;
  cfg.name = "demo";
  cfg.output_dir = "given/dir";
  CHECK(resolve_output_dir(cfg) == "given/dir");

  cfg.output_dir.clear();
  const char* saved = std::getenv("DIFFTUNE_OUT");
  const std::string saved_val = saved ? saved : "";
  ::setenv("DIFFTUNE_OUT", "envroot", 1);
  CHECK(resolve_output_dir(cfg) == "envroot/demo");
  ::unsetenv("DIFFTUNE_OUT");
  CHECK(resolve_output_dir(cfg) == "out/demo");
  if (saved) ::setenv("DIFFTUNE_OUT", saved_val.c_str(), 1);
}

TEST_CASE("evaluate_model: anchored model has zero kl and sane per-prompt stats") {
  const RewardScenario scen = scenario_by_name("multi");
  const NoiseSchedule sched = make_schedule(6, 1e-3, 0.2);
  Denoiser den = make_denoiser(scen.d, sched.T, scen.prompt_count(), {8}, 4);
  Rng rng(31);
  init_denoiser(den, rng);
  const ParamSnapshot anchor = make_snapshot(den);

  EvalConfig ec;
  ec.n_eval_rollouts = 25;
  ec.kl_trajectories = 2;
  ec.seed = 5;
  const ModelEval ev = evaluate_model(den, den.params, anchor, sched, scen, ec);
  CHECK(ev.kl_to_anchor == 0.0);
  REQUIRE(static_cast<int>(ev.per_prompt.size()) == scen.prompt_count());
  double reward_acc = 0.0, mass_acc = 0.0, wsum = 0.0;
  for (int z = 0; z < scen.prompt_count(); ++z) {
    const auto& pe = ev.per_prompt[z];
    CHECK(pe.prompt == z);
    CHECK(pe.target_mode_mass >= 0.0);
    CHECK(pe.target_mode_mass <= 1.0);
    CHECK(std::isfinite(pe.mean_quality));
    const double w = scen.prompts[z].weight;
    reward_acc += w * pe.mean_reward;
    mass_acc += w * pe.target_mode_mass;
    wsum += w;
  }
  CHECK(ev.mean_reward == doctest::Approx(reward_acc / wsum).epsilon(1e-12));
  CHECK(ev.target_mode_mass == doctest::Approx(mass_acc / wsum).epsilon(1e-12));

  // Scenario and denoiser must agree on the data dimension.
  Denoiser skinny = make_denoiser(1, sched.T, scen.prompt_count(), {8}, 4);
  Rng rng2(32);
  init_denoiser(skinny, rng2);
  CHECK_THROWS_AS(
      evaluate_model(skinny, skinny.params, make_snapshot(skinny), sched, scen, ec),
      DomainError);

  EvalConfig zero = ec;
  zero.n_eval_rollouts = 0;
  CHECK_THROWS_AS(evaluate_model(den, den.params, anchor, sched, scen, zero),
                  ConfigError);
}

TEST_CASE("reports serialize losslessly and validate their aggregates") {
  EvalReport rep = stub_report("stub", 0.75);
  rep.validate();

  nlohmann::json j = rep;
  EvalReport back = j.get<EvalReport>();
  CHECK(nlohmann::json(back) == j);

  const std::string path = "test_exp_report.json";
  save_eval_report(path, rep);
  const EvalReport loaded = load_eval_report(path);
  CHECK(nlohmann::json(loaded) == j);
  std::remove(path.c_str());

  EvalReport corrupt = rep;
  corrupt.aggregate.mean_reward += 1.0;
  CHECK_THROWS_AS(corrupt.validate(), ComparisonError);

  EvalReport infected = rep;
  infected.seeds[0].eval.mean_quality = std::nan("");
  CHECK_THROWS_AS(infected.validate(), NumericError);

  CHECK_THROWS_AS(load_eval_report("test_exp_no_report.json"), ConfigError);
}

TEST_CASE("comparisons: ordering flags, self-equality, and mismatch errors") {
  const EvalReport a = stub_report("a", 0.5);
  const EvalReport b = stub_report("b", 0.8);

  CHECK_THROWS_AS(compare_reports({a}), ComparisonError);

  EvalReport other = stub_report("c", 0.5);
  other.scenario_name = "pair";
  other.scenario_hash = scenario_hash(scenario_by_name("pair"));
  CHECK_THROWS_AS(compare_reports({a, other}), ComparisonError);

  const std::string self = compare_reports({a, a});
  std::istringstream is(self);
  std::string line;
  std::getline(is, line);
  CHECK(line == "metric,a,a,ordering");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    REQUIRE(!line.empty());
    CHECK(line.back() == '=');
  }
  CHECK(rows == 7 + 1);  // seven aggregate/pretrained rows + one prompt row

  const std::string ordered = compare_reports({a, b});
  std::istringstream is2(ordered);
  std::getline(is2, line);  // header
  std::getline(is2, line);  // aggregate_mean_reward: 0.5 vs 0.8
  CHECK(line.substr(0, 21) == "aggregate_mean_reward");
  CHECK(line.back() == '<');

  const std::string path = "test_exp_compare.csv";
  write_comparison(path, {a, b});
  CHECK(slurp(path) == ordered);
  std::remove(path.c_str());
}

TEST_CASE("run_experiment produces a reproducible artifact tree") {
  ExperimentConfig cfg;
  cfg.name = "tiny_eval";
  cfg.scenario = scenario_by_name("hue");
  cfg.schedule = make_schedule(8, 1e-3, 0.2);
  cfg.hidden = {8};
  cfg.time_features = 4;
  cfg.method = Method::eval_only;
  cfg.pretrain.steps = 30;
  cfg.pretrain.batch = 16;
  cfg.pretrain.log_every = 10;
  cfg.eval.n_eval_rollouts = 20;
  cfg.eval.kl_trajectories = 2;
  cfg.seeds = {1, 2};
  cfg.output_dir = "test_exp_run_a";

  const EvalReport rep = run_experiment(cfg);
  rep.validate();
  CHECK(rep.experiment == "tiny_eval");
  CHECK(rep.method == "eval");
  CHECK(rep.scenario_hash == scenario_hash(cfg.scenario));
  REQUIRE(rep.seeds.size() == 2);
  // eval_only never moves off the anchor.
  for (const auto& s : rep.seeds) CHECK(s.eval.kl_to_anchor == 0.0);

  CHECK(fs::exists("test_exp_run_a/report.json"));
  CHECK(fs::exists("test_exp_run_a/checkpoint_pretrained.bin"));
  CHECK(fs::exists("test_exp_run_a/pretrain_loss.csv"));
  const EvalReport loaded = load_eval_report("test_exp_run_a/report.json");
  CHECK(nlohmann::json(loaded) == nlohmann::json(rep));

  cfg.output_dir = "test_exp_run_b";
  const EvalReport rep2 = run_experiment(cfg);
  CHECK(nlohmann::json(rep2) == nlohmann::json(rep));
  CHECK(slurp("test_exp_run_b/report.json") == slurp("test_exp_run_a/report.json"));

  fs::remove_all("test_exp_run_a");
  fs::remove_all("test_exp_run_b");
}

} // TEST_SUITE
