// Copyright (c) 2026, the difftune authors
// SPDX-License-Identifier: Apache-2.0
#include "difftune/experiment.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "difftune/parallel.hpp"
#include "difftune/plot.hpp"

namespace difftune {

namespace {

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> allowed, const char* ctx) {
  if (!j.is_object())
    throw ConfigError(std::string(ctx) + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(std::string(ctx) + ": unknown key '" + it.key() + "'");
  }
}

template <typename F>
auto run_stage(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw TrainingError(std::string("stage ") + stage + ": " + e.what());
  }
}

} // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::dpok: return "dpok";
    case Method::sft: return "sft";
    case Method::eval_only: return "eval";
  }
  throw ConfigError("method: unknown value");
}

Method method_from_name(const std::string& name) {
  if (name == "dpok") return Method::dpok;
  if (name == "sft") return Method::sft;
  if (name == "eval") return Method::eval_only;
  throw ConfigError("method: expected dpok, sft, or eval; got '" + name + "'");
}

void EvalConfig::validate() const {
  if (n_eval_rollouts < 1)
    throw ConfigError("eval.n_eval_rollouts: must be >= 1");
  if (kl_trajectories < 1)
    throw ConfigError("eval.kl_trajectories: must be >= 1");
}

void ExperimentConfig::validate() const {
  if (name.empty()) throw ConfigError("experiment.name: must be nonempty");
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
          c == '-' || c == '.'))
      throw ConfigError("experiment.name: use [A-Za-z0-9_.-] only");
  scenario.validate();
  if (schedule.T < 1) throw ConfigError("schedule.T: must be >= 1");
  if (seeds.empty()) throw ConfigError("experiment.seeds: must be nonempty");
  pretrain.validate();
  eval.validate();
  if (method == Method::dpok) rl.validate();
  if (method == Method::sft) sft.validate();
  CondNetSpec spec;
  spec.d = scenario.d;
  spec.T = schedule.T;
  spec.prompt_count = scenario.prompt_count();
  spec.out_dim = scenario.d;
  spec.hidden = hidden;
  spec.time_features = time_features;
  spec.validate();
}

namespace {

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
  check_keys(j, {"T", "beta_min", "beta_max", "cov_mode"}, "schedule");
  const NoiseSchedule def = default_schedule();
  const int T = j.value("T", def.T);
  const double bmin = j.value("beta_min", def.betas.empty() ? 1e-3 : def.betas.front());
  const double bmax = j.value("beta_max", def.betas.empty() ? 0.2 : def.betas.back());
  ReverseCovMode mode = ReverseCovMode::tilde_beta_t;
  if (j.contains("cov_mode")) {
    const std::string s = j.at("cov_mode").get<std::string>();
    if (s == "beta_t") mode = ReverseCovMode::beta_t;
    else if (s == "tilde_beta_t") mode = ReverseCovMode::tilde_beta_t;
    else throw ConfigError("schedule.cov_mode: expected beta_t or tilde_beta_t");
  }
  return make_schedule(T, bmin, bmax, ScheduleShape::linear, mode);
}

PretrainConfig pretrain_from_json(const nlohmann::json& j) {
  check_keys(j, {"steps", "batch", "lr", "seed", "log_every"}, "pretrain");
  PretrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  return c;
}

RLConfig rl_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"alpha", "beta", "m", "n", "grad_steps_per_round",
              "max_grad_norm", "total_online_samples", "use_baseline",
              "is_ratio_clamp", "lr", "value_lr", "seed",
              "checkpoint_every_rounds", "kl_metric_trajs"},
             "rl");
  RLConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.m = j.value("m", c.m);
  c.n = j.value("n", c.n);
  c.grad_steps_per_round = j.value("grad_steps_per_round", c.grad_steps_per_round);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.total_online_samples = j.value("total_online_samples", c.total_online_samples);
  if (j.contains("use_baseline")) c.use_baseline = j.at("use_baseline").get<bool>();
  if (j.contains("is_ratio_clamp"))
    c.is_ratio_clamp = j.at("is_ratio_clamp").get<double>();
  c.lr = j.value("lr", c.lr);
  c.value_lr = j.value("value_lr", c.value_lr);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every_rounds = j.value("checkpoint_every_rounds", c.checkpoint_every_rounds);
  c.kl_metric_trajs = j.value("kl_metric_trajs", c.kl_metric_trajs);
  return c;
}

KLRegMode kl_mode_from_name(const std::string& s) {
  if (s == "none") return KLRegMode::none;
  if (s == "kl_d") return KLRegMode::kl_d;
  if (s == "kl_o") return KLRegMode::kl_o;
  throw ConfigError("sft.kl_mode: expected none, kl_d, or kl_o; got '" + s + "'");
}

SFTConfig sft_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"gamma", "kl_mode", "dataset_size", "batch", "steps", "lr",
              "seed", "eval_every", "eval_rollouts", "kl_eval_trajs",
              "x0_mode"},
             "sft");
  SFTConfig c;
  c.gamma = j.value("gamma", c.gamma);
  if (j.contains("kl_mode"))
    c.kl_mode = kl_mode_from_name(j.at("kl_mode").get<std::string>());
  c.dataset_size = j.value("dataset_size", c.dataset_size);
  c.batch = j.value("batch", c.batch);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_rollouts = j.value("eval_rollouts", c.eval_rollouts);
  c.kl_eval_trajs = j.value("kl_eval_trajs", c.kl_eval_trajs);
  if (j.contains("x0_mode")) {
    const std::string s = j.at("x0_mode").get<std::string>();
    if (s == "standard") c.x0_mode = X0PredMode::standard;
    else if (s == "per_step_alpha") c.x0_mode = X0PredMode::per_step_alpha;
    else throw ConfigError("sft.x0_mode: expected standard or per_step_alpha");
  }
  return c;
}

EvalConfig eval_from_json(const nlohmann::json& j) {
  check_keys(j, {"n_eval_rollouts", "kl_trajectories", "seed"}, "eval");
  EvalConfig c;
  c.n_eval_rollouts = j.value("n_eval_rollouts", c.n_eval_rollouts);
  c.kl_trajectories = j.value("kl_trajectories", c.kl_trajectories);
  c.seed = j.value("seed", c.seed);
  return c;
}

} // namespace

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"name", "scenario", "schedule", "model", "method", "pretrain",
              "rl", "sft", "seeds", "eval", "output_dir"},
             "experiment");
  ExperimentConfig cfg;
  if (!j.contains("name")) throw ConfigError("experiment.name: required");
  cfg.name = j.at("name").get<std::string>();
  if (!j.contains("scenario")) throw ConfigError("experiment.scenario: required");
  if (j.at("scenario").is_string())
    cfg.scenario = scenario_by_name(j.at("scenario").get<std::string>());
  else
    cfg.scenario = j.at("scenario").get<RewardScenario>();
  if (j.contains("schedule")) cfg.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"hidden", "time_features"}, "model");
    if (m.contains("hidden")) cfg.hidden = m.at("hidden").get<std::vector<int>>();
    cfg.time_features = m.value("time_features", cfg.time_features);
  }
  if (!j.contains("method")) throw ConfigError("experiment.method: required");
  cfg.method = method_from_name(j.at("method").get<std::string>());
  if (j.contains("pretrain")) cfg.pretrain = pretrain_from_json(j.at("pretrain"));
  if (j.contains("rl")) cfg.rl = rl_from_json(j.at("rl"));
  if (j.contains("sft")) cfg.sft = sft_from_json(j.at("sft"));
  if (j.contains("seeds"))
    cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("eval")) cfg.eval = eval_from_json(j.at("eval"));
  cfg.output_dir = j.value("output_dir", std::string());
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("DIFFTUNE_OUT");
  return std::string(root && *root ? root : "out") + "/" + cfg.name;
}

// ---------------------------------------------------------------------------

ModelEval evaluate_model(const Denoiser& den, const Vec& params,
                         const ParamSnapshot& anchor,
                         const NoiseSchedule& sched,
                         const RewardScenario& scenario,
                         const EvalConfig& cfg) {
  cfg.validate();
  scenario.validate();
  if (den.d() != scenario.d)
    throw DomainError("evaluate: denoiser dimension does not match scenario");

  Rng root(cfg.seed);
  ModelEval out;
  double weight_sum = 0.0;
  for (int z = 0; z < scenario.prompt_count(); ++z) {
    Rng rng = root.fork(z + 1);
    const double rho = 2.0 * std::sqrt(scenario.mixtures[z].var);
    PromptEval pe;
    pe.prompt = z;
    for (int i = 0; i < cfg.n_eval_rollouts; ++i) {
      const Trajectory traj = sample_trajectory(den, params, sched, z, rng);
      const Vec& x0 = traj.x0();
      pe.mean_reward += reward(scenario, x0, z);
      pe.mean_quality += quality(scenario, x0, z);
      if ((x0 - scenario.targets[z]).norm() <= rho) pe.target_mode_mass += 1.0;
    }
    pe.mean_reward /= cfg.n_eval_rollouts;
    pe.mean_quality /= cfg.n_eval_rollouts;
    pe.target_mode_mass /= cfg.n_eval_rollouts;

    const double w = scenario.prompts[z].weight;
    weight_sum += w;
    out.mean_reward += w * pe.mean_reward;
    out.mean_quality += w * pe.mean_quality;
    out.target_mode_mass += w * pe.target_mode_mass;
    out.per_prompt.push_back(pe);
  }
  out.mean_reward /= weight_sum;
  out.mean_quality /= weight_sum;
  out.target_mode_mass /= weight_sum;

  Rng kl_rng = root.fork(1000003);
  out.kl_to_anchor = estimate_kl_to_pretrained(den, params, anchor, sched,
                                               scenario, cfg.kl_trajectories,
                                               kl_rng);
  return out;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const PromptEval& e) {
  j = nlohmann::json{{"prompt", e.prompt},
                     {"mean_reward", e.mean_reward},
                     {"mean_quality", e.mean_quality},
                     {"target_mode_mass", e.target_mode_mass}};
}

void from_json(const nlohmann::json& j, PromptEval& e) {
  j.at("prompt").get_to(e.prompt);
  j.at("mean_reward").get_to(e.mean_reward);
  j.at("mean_quality").get_to(e.mean_quality);
  j.at("target_mode_mass").get_to(e.target_mode_mass);
}

void to_json(nlohmann::json& j, const ModelEval& e) {
  j = nlohmann::json{{"mean_reward", e.mean_reward},
                     {"mean_quality", e.mean_quality},
                     {"kl_to_anchor", e.kl_to_anchor},
                     {"target_mode_mass", e.target_mode_mass},
                     {"per_prompt", e.per_prompt}};
}

void from_json(const nlohmann::json& j, ModelEval& e) {
  j.at("mean_reward").get_to(e.mean_reward);
  j.at("mean_quality").get_to(e.mean_quality);
  j.at("kl_to_anchor").get_to(e.kl_to_anchor);
  j.at("target_mode_mass").get_to(e.target_mode_mass);
  j.at("per_prompt").get_to(e.per_prompt);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.seeds)
    seeds.push_back({{"seed", s.seed}, {"eval", s.eval}});
  j = nlohmann::json{{"experiment", r.experiment},
                     {"scenario", r.scenario_name},
                     {"scenario_hash", r.scenario_hash},
                     {"method", r.method},
                     {"pretrained", r.pretrained},
                     {"seeds", seeds},
                     {"aggregate", r.aggregate}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("experiment").get_to(r.experiment);
  j.at("scenario").get_to(r.scenario_name);
  j.at("scenario_hash").get_to(r.scenario_hash);
  j.at("method").get_to(r.method);
  j.at("pretrained").get_to(r.pretrained);
  r.seeds.clear();
  for (const auto& s : j.at("seeds")) {
    SeedEval se;
    s.at("seed").get_to(se.seed);
    s.at("eval").get_to(se.eval);
    r.seeds.push_back(std::move(se));
  }
  j.at("aggregate").get_to(r.aggregate);
}

namespace {

void check_finite_eval(const ModelEval& e, const char* where) {
  const double vals[] = {e.mean_reward, e.mean_quality, e.kl_to_anchor,
                         e.target_mode_mass};
  for (double v : vals)
    if (!std::isfinite(v))
      throw NumericError(std::string("report: non-finite metric in ") + where);
  for (const auto& p : e.per_prompt)
    if (!std::isfinite(p.mean_reward) || !std::isfinite(p.mean_quality) ||
        !std::isfinite(p.target_mode_mass))
      throw NumericError(std::string("report: non-finite prompt metric in ") +
                         where);
}

ModelEval aggregate_evals(const std::vector<SeedEval>& seeds) {
  ModelEval agg;
  if (seeds.empty()) return agg;
  agg.per_prompt.resize(seeds.front().eval.per_prompt.size());
  for (const auto& s : seeds) {
    if (s.eval.per_prompt.size() != agg.per_prompt.size())
      throw ComparisonError("report: inconsistent per-prompt sizes across seeds");
    agg.mean_reward += s.eval.mean_reward;
    agg.mean_quality += s.eval.mean_quality;
    agg.kl_to_anchor += s.eval.kl_to_anchor;
    agg.target_mode_mass += s.eval.target_mode_mass;
    for (std::size_t k = 0; k < agg.per_prompt.size(); ++k) {
      agg.per_prompt[k].mean_reward += s.eval.per_prompt[k].mean_reward;
      agg.per_prompt[k].mean_quality += s.eval.per_prompt[k].mean_quality;
      agg.per_prompt[k].target_mode_mass += s.eval.per_prompt[k].target_mode_mass;
    }
  }
  const double n = static_cast<double>(seeds.size());
  agg.mean_reward /= n;
  agg.mean_quality /= n;
  agg.kl_to_anchor /= n;
  agg.target_mode_mass /= n;
  for (std::size_t k = 0; k < agg.per_prompt.size(); ++k) {
    agg.per_prompt[k].prompt = seeds.front().eval.per_prompt[k].prompt;
    agg.per_prompt[k].mean_reward /= n;
    agg.per_prompt[k].mean_quality /= n;
    agg.per_prompt[k].target_mode_mass /= n;
  }
  return agg;
}

} // namespace

void EvalReport::validate() const {
  check_finite_eval(pretrained, "pretrained");
  for (const auto& s : seeds) check_finite_eval(s.eval, "seed eval");
  check_finite_eval(aggregate, "aggregate");
  if (!seeds.empty()) {
    const ModelEval expect = aggregate_evals(seeds);
    const double tol = 1e-9 * (1.0 + std::abs(expect.mean_reward));
    if (std::abs(expect.mean_reward - aggregate.mean_reward) > tol)
      throw ComparisonError("report: aggregate is not the mean over seeds");
  }
}

EvalReport load_eval_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("report: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report: invalid JSON in " + path + ": " + e.what());
  }
  EvalReport r;
  try {
    from_json(j, r);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report: missing field in " + path + ": " + e.what());
  }
  return r;
}

void save_eval_report(const std::string& path, const EvalReport& r) {
  nlohmann::json j = r;
  std::ofstream out(path);
  if (!out) throw ConfigError("report: cannot open for write: " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

namespace {

void write_metric_plots(const std::string& dir,
                        const std::vector<std::uint64_t>& seeds,
                        const std::vector<MetricsLog>& logs) {
  struct Col {
    const char* file;
    const char* title;
    std::function<double(const MetricsRow&)> get;
  };
  const Col cols[] = {
      {"reward.svg", "mean reward", [](const MetricsRow& r) { return r.mean_reward; }},
      {"quality.svg", "mean quality", [](const MetricsRow& r) { return r.mean_quality; }},
      {"kl.svg", "KL to pretrained", [](const MetricsRow& r) { return r.kl_estimate; }},
  };
  for (const auto& col : cols) {
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      if (logs[i].rows.empty()) continue;
      PlotSeries s;
      s.label = "seed " + std::to_string(seeds[i]);
      for (const auto& row : logs[i].rows) {
        s.x.push_back(static_cast<double>(row.samples_consumed));
        s.y.push_back(col.get(row));
      }
      series.push_back(std::move(s));
    }
    if (!series.empty())
      svg_line_plot(dir + "/" + col.file, col.title, "samples consumed",
                    col.title, series);
  }
}

} // namespace

EvalReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string out_dir = resolve_output_dir(cfg);
  std::filesystem::create_directories(out_dir);

  // Pretraining is shared across seeds; only fine-tuning reseeds.
  Denoiser den = make_denoiser(cfg.scenario.d, cfg.schedule.T,
                               cfg.scenario.prompt_count(), cfg.hidden,
                               cfg.time_features);
  const ParamSnapshot pre = run_stage("pretrain", [&] {
    Rng rng(cfg.pretrain.seed);
    init_denoiser(den, rng);
    PretrainConfig pcfg = cfg.pretrain;
    pcfg.loss_csv_path = out_dir + "/pretrain_loss.csv";
    ParamSnapshot snap = pretrain(den, cfg.schedule, cfg.scenario, pcfg);
    save_checkpoint(out_dir + "/checkpoint_pretrained.bin", den);
    return snap;
  });

  const ModelEval pre_eval = run_stage("eval-pretrained", [&] {
    return evaluate_model(den, pre.params, pre, cfg.schedule, cfg.scenario,
                          cfg.eval);
  });

  const int n_seeds = static_cast<int>(cfg.seeds.size());
  std::vector<SeedEval> per_seed(n_seeds);
  std::vector<MetricsLog> logs(n_seeds);
  run_stage("fine-tune", [&] {
    parallel_for(n_seeds, [&](int i) {
      const std::uint64_t seed = cfg.seeds[i];
      Denoiser worker = den;
      worker.params = pre.params;
      worker.version = pre.version;
      ParamSnapshot result = pre;
      if (cfg.method != Method::eval_only) {
        const std::string seed_dir = out_dir + "/seed_" + std::to_string(seed);
        std::filesystem::create_directories(seed_dir);
        if (cfg.method == Method::dpok) {
          RLConfig rc = cfg.rl;
          rc.seed = seed;
          DpokResult res = run_dpok(worker, pre, cfg.schedule, cfg.scenario,
                                    rc, seed_dir);
          result = res.snapshot;
          logs[i] = std::move(res.metrics);
        } else {
          SFTConfig sc = cfg.sft;
          sc.seed = seed;
          const SFTDataset ds =
              build_dataset(worker, pre.params, cfg.schedule, cfg.scenario,
                            sc.dataset_size, seed);
          save_dataset(seed_dir + "/dataset.jsonl", ds);
          SftResult res = run_sft(worker, pre, cfg.schedule, cfg.scenario, ds,
                                  sc, seed_dir);
          result = res.snapshot;
          logs[i] = std::move(res.metrics);
        }
      }
      per_seed[i].seed = seed;
      per_seed[i].eval = evaluate_model(worker, result.params, pre,
                                        cfg.schedule, cfg.scenario, cfg.eval);
    });
    return 0;
  });

  EvalReport report;
  report.experiment = cfg.name;
  report.scenario_name = cfg.scenario.name;
  report.scenario_hash = scenario_hash(cfg.scenario);
  report.method = method_name(cfg.method);
  report.pretrained = pre_eval;
  report.seeds = per_seed;
  report.aggregate = aggregate_evals(per_seed);

  run_stage("report", [&] {
    report.validate();
    if (cfg.method != Method::eval_only)
      write_metric_plots(out_dir, cfg.seeds, logs);
    save_eval_report(out_dir + "/report.json", report);
    return 0;
  });
  return report;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

} // namespace

std::string compare_reports(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2)
    throw ComparisonError("compare: need at least two reports");
  for (const auto& r : reports) {
    if (r.scenario_hash != reports.front().scenario_hash ||
        r.scenario_name != reports.front().scenario_name)
      throw ComparisonError("compare: scenario mismatch between '" +
                            reports.front().experiment + "' and '" +
                            r.experiment + "'");
    r.validate();
  }

  struct Row {
    std::string label;
    std::function<double(const EvalReport&)> get;
  };
  std::vector<Row> rows = {
      {"aggregate_mean_reward",
       [](const EvalReport& r) { return r.aggregate.mean_reward; }},
      {"aggregate_mean_quality",
       [](const EvalReport& r) { return r.aggregate.mean_quality; }},
      {"aggregate_kl_to_anchor",
       [](const EvalReport& r) { return r.aggregate.kl_to_anchor; }},
      {"aggregate_target_mode_mass",
       [](const EvalReport& r) { return r.aggregate.target_mode_mass; }},
      {"pretrained_mean_reward",
       [](const EvalReport& r) { return r.pretrained.mean_reward; }},
      {"pretrained_mean_quality",
       [](const EvalReport& r) { return r.pretrained.mean_quality; }},
      {"pretrained_target_mode_mass",
       [](const EvalReport& r) { return r.pretrained.target_mode_mass; }},
  };
  const std::size_t prompts = reports.front().aggregate.per_prompt.size();
  for (std::size_t k = 0; k < prompts; ++k)
    rows.push_back({"prompt_" + std::to_string(k) + "_mean_reward",
                    [k](const EvalReport& r) {
                      if (k >= r.aggregate.per_prompt.size())
                        throw ComparisonError(
                            "compare: per-prompt size mismatch");
                      return r.aggregate.per_prompt[k].mean_reward;
                    }});

  std::ostringstream os;
  os << "metric";
  for (const auto& r : reports) os << "," << r.experiment;
  os << ",ordering\n";
  for (const auto& row : rows) {
    os << row.label;
    std::vector<double> vals;
    for (const auto& r : reports) {
      vals.push_back(row.get(r));
      os << "," << num(vals.back());
    }
    os << ",";
    for (std::size_t i = 0; i + 1 < vals.size(); ++i)
      os << (vals[i] > vals[i + 1] ? '>' : vals[i] < vals[i + 1] ? '<' : '=');
    os << "\n";
  }
  return os.str();
}

void write_comparison(const std::string& path,
                      const std::vector<EvalReport>& reports) {
  const std::string csv = compare_reports(reports);
  std::ofstream out(path);
  if (!out) throw ConfigError("compare: cannot open for write: " + path);
  out << csv;
}

} // namespace difftune
