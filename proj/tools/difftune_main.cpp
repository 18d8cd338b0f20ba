// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
//
// difftune CLI: run experiments from JSON configs, compare their reports,
// run the numerical certification suite, and evaluate checkpoints.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "difftune/experiment.hpp"
#include "difftune/verify.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  const difftune::ExperimentConfig cfg =
      difftune::load_experiment_config(config_path);
  const difftune::EvalReport report = difftune::run_experiment(cfg);
  const std::string out_dir = difftune::resolve_output_dir(cfg);
  std::cout << "experiment " << report.experiment << " (" << report.method
            << ", scenario " << report.scenario_name << ")\n"
            << "  pretrained reward " << report.pretrained.mean_reward
            << "  quality " << report.pretrained.mean_quality
            << "  mode mass " << report.pretrained.target_mode_mass << "\n"
            << "  aggregate  reward " << report.aggregate.mean_reward
            << "  quality " << report.aggregate.mean_quality << "  KL "
            << report.aggregate.kl_to_anchor << "  mode mass "
            << report.aggregate.target_mode_mass << "\n"
            << "  artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& report_paths,
                const std::string& out_path) {
  std::vector<difftune::EvalReport> reports;
  reports.reserve(report_paths.size());
  for (const auto& p : report_paths)
    reports.push_back(difftune::load_eval_report(p));
  const std::string csv = difftune::compare_reports(reports);
  std::cout << csv;
  if (!out_path.empty()) difftune::write_comparison(out_path, reports);
  return 0;
}

int cmd_verify(std::uint64_t seed, const std::string& out_path) {
  const std::vector<difftune::VerifyReport> reports = difftune::verify_all(seed);
  bool all = true;
  for (const auto& r : reports) {
    all = all && r.pass;
    std::printf("[%s] %-32s lhs=%-12.6g rhs=%-12.6g se=%-10.4g n=%ld\n",
                r.pass ? "PASS" : "FAIL", r.name.c_str(), r.lhs, r.rhs, r.se,
                r.n);
    if (!r.note.empty()) std::printf("       %s\n", r.note.c_str());
  }
  if (!out_path.empty()) difftune::write_verify_reports(out_path, reports);
  std::printf("%s\n", all ? "all checks passed" : "CHECK FAILURES");
  return all ? 0 : 1;
}

int cmd_eval(const std::string& checkpoint, const std::string& scenario_arg,
             const std::string& anchor_path, int rollouts, std::uint64_t seed,
             const std::string& out_path) {
  difftune::Denoiser den = difftune::load_checkpoint(checkpoint);
  const difftune::RewardScenario scenario =
      std::filesystem::exists(scenario_arg)
          ? difftune::load_scenario(scenario_arg)
          : difftune::scenario_by_name(scenario_arg);
  difftune::ParamSnapshot anchor = difftune::make_snapshot(den);
  if (!anchor_path.empty()) {
    const difftune::Denoiser anchor_den = difftune::load_checkpoint(anchor_path);
    anchor = difftune::make_snapshot(anchor_den);
  }
  difftune::EvalConfig cfg;
  cfg.n_eval_rollouts = rollouts;
  cfg.seed = seed;
  const difftune::NoiseSchedule sched = difftune::default_schedule();
  if (den.T() != sched.T)
    throw difftune::ConfigError(
        "eval: checkpoint horizon does not match the default schedule (T=" +
        std::to_string(den.T()) + " vs " + std::to_string(sched.T) + ")");
  const difftune::ModelEval eval =
      difftune::evaluate_model(den, den.params, anchor, sched, scenario, cfg);
  const nlohmann::json j = eval;
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out)
      throw difftune::ConfigError("eval: cannot open for write: " + out_path);
    out << j.dump(2) << "\n";
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"difftune: KL-regularized fine-tuning of toy diffusion models"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("config", config_path, "Experiment config JSON")->required();

  std::vector<std::string> report_paths;
  std::string compare_out;
  auto* compare =
      app.add_subcommand("compare", "Side-by-side table over eval reports");
  compare->add_option("reports", report_paths, "report.json files (>= 2)")
      ->required()
      ->expected(-2);
  compare->add_option("-o,--out", compare_out, "Write the CSV here too");

  std::uint64_t verify_seed = 1;
  std::string verify_out;
  auto* verify =
      app.add_subcommand("verify", "Run the numerical certification suite");
  verify->add_option("--seed", verify_seed, "Root seed");
  verify->add_option("--out", verify_out, "Write the JSON reports here");

  std::string eval_checkpoint, eval_scenario, eval_anchor, eval_out;
  int eval_rollouts = 200;
  std::uint64_t eval_seed = 77;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a scenario");
  eval->add_option("checkpoint", eval_checkpoint, "Checkpoint file")->required();
  eval->add_option("scenario", eval_scenario, "Scenario name or JSON file")
      ->required();
  eval->add_option("--anchor", eval_anchor,
                   "Checkpoint the KL estimate is taken against "
                   "(default: the evaluated checkpoint itself)");
  eval->add_option("--rollouts", eval_rollouts, "Rollouts per prompt");
  eval->add_option("--seed", eval_seed, "Eval seed");
  eval->add_option("--out", eval_out, "Write the eval JSON here too");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (compare->parsed()) return cmd_compare(report_paths, compare_out);
    if (verify->parsed()) return cmd_verify(verify_seed, verify_out);
    if (eval->parsed())
      return cmd_eval(eval_checkpoint, eval_scenario, eval_anchor,
                      eval_rollouts, eval_seed, eval_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
