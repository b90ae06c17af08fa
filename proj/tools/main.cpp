// Command-line front end: training runs, evaluation sweeps (including
// compositional generalization and cube sorting), theory certification and
// reward audits. All outputs are deterministic for a fixed seed and
// overwrite their output directory idempotently.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "setrl/config.hpp"
#include "setrl/stats.hpp"
#include "setrl/theory.hpp"

extern char** environ;

namespace fs = std::filesystem;
using setrl::Json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitRefused = 4;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json metrics_to_json(const setrl::MetricRecord& r) {
  return Json{{"env_steps", r.env_steps},
              {"success_rate", r.success_rate},
              {"success_fraction", r.success_fraction},
              {"max_obj_dist", r.max_obj_dist},
              {"avg_obj_dist", r.avg_obj_dist},
              {"avg_return", r.avg_return},
              {"critic_loss", r.critic_loss},
              {"actor_loss", r.actor_loss}};
}

setrl::TransitionReward make_reward(const setrl::RunConfig& cfg) {
  switch (cfg.reward_type) {
    case setrl::RewardType::gt:
      return setrl::make_gt_reward(cfg.task);
    case setrl::RewardType::chamfer:
      return setrl::make_chamfer_reward(cfg.reward, cfg.reward_distance);
    case setrl::RewardType::smorl:
      return setrl::make_smorl_reward(cfg.reward);
  }
  throw std::logic_error("unknown reward type");
}

// ---- train ----

template <class S, class Family>
int run_train_with(Family fam, const setrl::RunConfig& cfg) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write metrics.jsonl");

  setrl::Trainer<S, Family> trainer(std::move(fam), cfg.task, cfg.encoder, cfg.train,
                                    make_reward(cfg), cfg.seed);
  const Json sidecar{{"config", setrl::config_to_json(cfg)},
                     {"net", cfg.net_type == setrl::NetType::eit ? "eit" : "unstructured"}};

  auto save = [&](const std::string& name) {
    setrl::save_checkpoint((out / (name + ".bin")).string(), trainer.actor);
    write_json(out / (name + ".json"), sidecar);
  };
  setrl::TrainHooks hooks;
  hooks.on_metrics = [&](const setrl::MetricRecord& r) {
    metrics << metrics_to_json(r).dump() << "\n";
    metrics.flush();
    std::cerr << "steps " << r.env_steps << "  success " << r.success_rate << "  return "
              << r.avg_return << "  critic_loss " << r.critic_loss << "\n";
  };
  hooks.on_checkpoint = [&](long steps) { save("checkpoint_" + std::to_string(steps)); };

  auto stats = trainer.run(cfg.seed, hooks);
  save("checkpoint_final");
  Json summary{{"env_steps", stats.env_steps},
               {"stopped_early", stats.stopped_early},
               {"checkpoint", "checkpoint_final.bin"},
               {"config", setrl::config_to_json(cfg)}};
  if (!stats.metrics.empty()) summary["final_metrics"] = metrics_to_json(stats.metrics.back());
  write_json(out / "summary.json", summary);
  return kExitOk;
}

int cmd_train(const std::string& config_path) {
  const setrl::RunConfig cfg = setrl::load_run_config(config_path, environ);
  if (cfg.net_type == setrl::NetType::eit) {
    if (cfg.precision == setrl::Precision::f32)
      return run_train_with<float>(setrl::EITFamily<float>{cfg.net}, cfg);
    return run_train_with<double>(setrl::EITFamily<double>{cfg.net}, cfg);
  }
  if (cfg.precision == setrl::Precision::f32)
    return run_train_with<float>(setrl::UnstructuredFamily<float>{cfg.unstructured}, cfg);
  return run_train_with<double>(setrl::UnstructuredFamily<double>{cfg.unstructured}, cfg);
}

// ---- eval ----

struct EvalRow {
  int n_objects = 0;
  int episodes = 0;
  setrl::MetricRecord mean;
};

template <class S, class Family>
EvalRow eval_task(const Family& fam, const setrl::ParamStore<S>& actor,
                  const setrl::RunConfig& cfg, const setrl::TaskConfig& task, int episodes,
                  std::uint64_t seed, const fs::path* traj_path) {
  EvalRow row;
  row.n_objects = task.n_objects;
  row.episodes = episodes;
  const int horizon = setrl::effective_horizon(task);
  for (int e = 0; e < episodes; ++e) {
    auto rng = setrl::make_rng(setrl::derive_seed(seed, static_cast<std::uint64_t>(e)));
    auto [s, g] = setrl::reset(task, rng);
    const auto goal_sets = setrl::encode_goal(g, cfg.encoder, rng);
    std::vector<setrl::SimState> traj = {s};
    std::vector<Eigen::Vector2d> actions;
    std::vector<double> rewards;
    for (int t = 0; t < horizon; ++t) {
      setrl::Observation obs;
      obs.state_sets = setrl::encode_state(s, cfg.encoder, rng);
      obs.goal_sets = goal_sets;
      const Eigen::Vector2d a = fam.policy_single(actor, obs);
      s = setrl::step(s, a, task);
      traj.push_back(s);
      actions.push_back(a);
      rewards.push_back(setrl::gt_reward(s, g, task));
    }
    const setrl::Metrics m = setrl::episode_metrics(traj, g, task);
    row.mean.success_rate += m.success;
    row.mean.success_fraction += m.success_fraction;
    row.mean.max_obj_dist += m.max_obj_dist;
    row.mean.avg_obj_dist += m.avg_obj_dist;
    row.mean.avg_return += m.avg_return;
    if (e == 0 && traj_path != nullptr) {
      std::ofstream ts(*traj_path, std::ios::trunc);
      setrl::dump_trajectory_jsonl(ts, traj, actions, rewards);
    }
  }
  const double inv = 1.0 / episodes;
  row.mean.success_rate *= inv;
  row.mean.success_fraction *= inv;
  row.mean.max_obj_dist *= inv;
  row.mean.avg_obj_dist *= inv;
  row.mean.avg_return *= inv;
  return row;
}

std::vector<int> parse_object_counts(const std::string& text) {
  std::vector<int> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const int lo = std::stoi(text.substr(0, dots));
    const int hi = std::stoi(text.substr(dots + 2));
    for (int n = lo; n <= hi; ++n) out.push_back(n);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  if (out.empty()) throw setrl::ConfigError("empty --n-objects list");
  return out;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_override,
             const std::string& n_objects, int episodes, std::uint64_t seed,
             const std::string& out_dir, const std::string& variant, bool dump_trajectories) {
  fs::path sidecar_path(checkpoint);
  sidecar_path.replace_extension(".json");
  std::ifstream sc(sidecar_path);
  if (!sc) throw setrl::ConfigError("missing checkpoint sidecar: " + sidecar_path.string());
  Json sidecar = Json::parse(sc);
  setrl::RunConfig cfg = setrl::config_from_json(sidecar.at("config"));
  if (!config_override.empty()) cfg = setrl::load_run_config(config_override, environ);
  if (seed != static_cast<std::uint64_t>(-1)) cfg.seed = seed;

  std::vector<int> counts =
      n_objects.empty() ? std::vector<int>{cfg.task.n_objects} : parse_object_counts(n_objects);

  const fs::path out = out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(out_dir);
  fs::create_directories(out);

  Json rows = Json::array();
  std::cout << "n_objects  episodes  success  fraction  max_dist  avg_dist  avg_return\n";
  for (int n : counts) {
    setrl::TaskConfig task = cfg.task;
    task.n_objects = n;
    task.horizon = 0;  // per-object-count default
    if (!variant.empty()) task.variant = setrl::detail::parse_variant(variant);

    EvalRow row;
    if (cfg.net_type == setrl::NetType::eit) {
      setrl::EITFamily<float> fam{cfg.net};
      setrl::ParamStore<float> actor, c1, c2;
      auto rng = setrl::make_rng(1);
      fam.build(actor, c1, c2, rng);
      setrl::load_checkpoint(checkpoint, actor);
      fs::path traj = out / ("trajectory_n" + std::to_string(n) + ".jsonl");
      row = eval_task(fam, actor, cfg, task, episodes, cfg.seed + 9000 + n,
                      dump_trajectories ? &traj : nullptr);
    } else {
      setrl::UnstructuredFamily<float> fam{cfg.unstructured};
      setrl::ParamStore<float> actor, c1, c2;
      auto rng = setrl::make_rng(1);
      fam.build(actor, c1, c2, rng);
      setrl::load_checkpoint(checkpoint, actor);
      if (n + 1 != fam.cfg.state_entities) {
        std::cerr << "refusing: unstructured checkpoint was trained for "
                  << fam.cfg.state_entities - 1 << " objects, cannot evaluate " << n
                  << " (fixed input width)\n";
        return kExitRefused;
      }
      fs::path traj = out / ("trajectory_n" + std::to_string(n) + ".jsonl");
      row = eval_task(fam, actor, cfg, task, episodes, cfg.seed + 9000 + n,
                      dump_trajectories ? &traj : nullptr);
    }
    std::cout << n << "  " << row.episodes << "  " << row.mean.success_rate << "  "
              << row.mean.success_fraction << "  " << row.mean.max_obj_dist << "  "
              << row.mean.avg_obj_dist << "  " << row.mean.avg_return << "\n";
    rows.push_back(Json{{"n_objects", n},
                        {"episodes", row.episodes},
                        {"success_rate", row.mean.success_rate},
                        {"success_fraction", row.mean.success_fraction},
                        {"max_obj_dist", row.mean.max_obj_dist},
                        {"avg_obj_dist", row.mean.avg_obj_dist},
                        {"avg_return", row.mean.avg_return}});
  }
  write_json(out / "eval.json", Json{{"checkpoint", checkpoint}, {"rows", rows}});
  return kExitOk;
}

// ---- verify-theory ----

Json cert_to_json(const setrl::theory::CertReport& rep, int instances) {
  Json rows = Json::array();
  for (const auto& r : rep.rows)
    rows.push_back(Json{{"k", r.k},
                        {"bound", r.bound},
                        {"max_measured", r.max_measured},
                        {"trials", r.trials},
                        {"violations", r.violations}});
  Json j{{"theorem", rep.theorem},
         {"M", rep.M},
         {"gamma", rep.gamma},
         {"epsilon", rep.epsilon},
         {"instances", instances},
         {"rows", rows},
         {"violations", rep.violations},
         {"premise",
          Json{{"epsilon_requested", rep.premise.epsilon_requested},
               {"delta_requested", rep.premise.delta_requested},
               {"measured_value_gap", rep.premise.measured_value_gap},
               {"measured_q_gap", rep.premise.measured_q_gap},
               {"measured_weight_gap", rep.premise.measured_weight_gap},
               {"samples", rep.premise.samples},
               {"attempts", rep.premise.attempts}}}};
  if (rep.theorem == "theorem3")
    j["lambda"] = rep.lambda;
  else
    j["delta"] = rep.delta;
  return j;
}

int cmd_verify_theory(const std::string& config_path, const std::string& out_override) {
  std::ifstream is(config_path);
  if (!is) throw setrl::ConfigError("cannot open config file: " + config_path);
  Json j;
  try {
    j = Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw setrl::ConfigError("config parse error in " + config_path + ": " + e.what());
  }
  setrl::apply_env_overrides(j, environ);
  const std::uint64_t seed = j.value("seed", 0);
  const fs::path out(out_override.empty() ? j.value("output_dir", std::string("theory_out"))
                                          : out_override);
  fs::create_directories(out);
  const int instances = j.value("instances", 50);
  const long trials = j.value("trials_per_k", 100L);
  const long premise_samples = j.value("premise_samples", 10000L);
  const double fault = j.value("fault_injection", false) ? 500.0 : 1.0;
  setrl::theory::PerturbationSpec pert;
  pert.epsilon = j.value("epsilon", 0.01);
  pert.delta = j.value("delta", 0.001);
  pert.train_objects = j.value("M", 4);
  pert.extrapolation = j.value("k_max", 3);
  const double lambda = j.value("lambda", 0.4);
  const double separation = j.value("state_separation", 0.1);
  std::vector<double> gammas;
  for (const auto& g : j.value("gammas", Json::array({0.9, 0.98}))) gammas.push_back(g);

  long total_violations = 0;
  auto rng = setrl::make_rng(setrl::derive_seed(seed, 11));

  {  // theorem 1, aggregated over random instances
    Json reports = Json::array();
    for (double gamma : gammas) {
      setrl::theory::CertReport agg;
      for (int i = 0; i < instances; ++i) {
        auto spec = setrl::theory::random_spec(rng, gamma);
        auto rep = setrl::theory::certify_theorem1(
            spec, pert, trials, rng, std::max(1L, premise_samples / std::max(1, instances)),
            fault);
        if (agg.rows.empty()) {
          agg = rep;
        } else {
          for (std::size_t r = 0; r < rep.rows.size(); ++r) {
            agg.rows[r].max_measured =
                std::max(agg.rows[r].max_measured, rep.rows[r].max_measured);
            agg.rows[r].trials += rep.rows[r].trials;
            agg.rows[r].violations += rep.rows[r].violations;
          }
          agg.violations += rep.violations;
          agg.premise.measured_q_gap =
              std::max(agg.premise.measured_q_gap, rep.premise.measured_q_gap);
          agg.premise.measured_weight_gap =
              std::max(agg.premise.measured_weight_gap, rep.premise.measured_weight_gap);
          agg.premise.samples += rep.premise.samples;
        }
      }
      total_violations += agg.violations;
      reports.push_back(cert_to_json(agg, instances));
    }
    write_json(out / "theorem1.json", Json{{"reports", reports}});
  }

  {  // theorem 3 on lambda-separated specs
    Json reports = Json::array();
    for (double gamma : gammas) {
      setrl::theory::CertReport agg;
      for (int i = 0; i < instances; ++i) {
        auto spec = setrl::theory::random_separable_spec(
            rng, gamma, lambda, pert.train_objects + pert.extrapolation, separation);
        auto rep = setrl::theory::certify_theorem3(
            spec, pert, lambda, separation, trials, rng,
            std::max(1L, premise_samples / std::max(1, instances)), fault);
        if (agg.rows.empty()) {
          agg = rep;
        } else {
          for (std::size_t r = 0; r < rep.rows.size(); ++r) {
            agg.rows[r].max_measured =
                std::max(agg.rows[r].max_measured, rep.rows[r].max_measured);
            agg.rows[r].trials += rep.rows[r].trials;
            agg.rows[r].violations += rep.rows[r].violations;
          }
          agg.violations += rep.violations;
        }
      }
      total_violations += agg.violations;
      reports.push_back(cert_to_json(agg, instances));
    }
    write_json(out / "theorem3.json", Json{{"reports", reports}});
  }

  {  // deepsets aggregation
    const double ds_eps = j.value("deepsets_epsilon", 0.02);
    const int n_max = j.value("deepsets_n_max", 8);
    const long ds_trials = j.value("deepsets_trials", 20L);
    long violations = 0;
    double max_measured = 0.0;
    for (int i = 0; i < instances; ++i) {
      auto spec = setrl::theory::random_spec(rng, 0.9);
      auto noise = setrl::theory::random_map(rng, spec.state_dim + spec.action_dim, -1.0, 1.0);
      setrl::theory::ValueFn vh = [spec, noise, ds_eps](const Eigen::VectorXd& s,
                                                        const Eigen::VectorXd& a) {
        Eigen::VectorXd x(s.size() + a.size());
        x << s, a;
        return spec.value(s, a) + ds_eps * noise(x);
      };
      auto rep =
          setrl::theory::deepsets_check(spec.value, vh, ds_eps, n_max, ds_trials, spec, rng);
      violations += rep.violations;
      max_measured = std::max(max_measured, rep.max_measured);
    }
    total_violations += violations;
    write_json(out / "deepsets.json", Json{{"epsilon", ds_eps},
                                           {"n_max", n_max},
                                           {"trials", ds_trials * instances},
                                           {"max_measured", max_measured},
                                           {"violations", violations}});
  }

  {  // counterexample demonstration
    long violations = 0;
    double max_small_gap = 0.0;
    long positive_n3 = 0;
    const long ce_trials = j.value("counterexample_trials", 200L);
    for (long t = 0; t < ce_trials; ++t) {
      auto spec = setrl::theory::random_spec(rng, 0.9);
      auto a = setrl::theory::sample_action(spec, rng);
      auto small = setrl::theory::sample_states(spec, 1 + static_cast<int>(t % 2), rng);
      const double gap = std::abs(setrl::theory::counterexample_eval(spec, small, a) -
                                  setrl::theory::q_star_eval(spec, small, a));
      max_small_gap = std::max(max_small_gap, gap);
      if (gap >= 1e-12) ++violations;
      auto three = setrl::theory::sample_states(spec, 3, rng);
      const double err = std::abs(setrl::theory::counterexample_eval(spec, three, a) -
                                  setrl::theory::q_star_eval(spec, three, a));
      if (err > 0.0) ++positive_n3;
    }
    // the pinned hand-derived instance
    setrl::theory::SyntheticQSpec pinned;
    pinned.state_dim = 1;
    pinned.action_dim = 1;
    pinned.gamma = 0.9;
    pinned.alpha = [](const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd&) {
      return 1.0;
    };
    pinned.value = [](const Eigen::VectorXd& s, const Eigen::VectorXd&) { return s(0); };
    std::vector<Eigen::VectorXd> states;
    for (double v : {0.1, 0.2, 0.3}) {
      Eigen::VectorXd s(1);
      s << v;
      states.push_back(s);
    }
    Eigen::VectorXd a0(1);
    a0 << 0.0;
    const double pinned_err = std::abs(setrl::theory::counterexample_eval(pinned, states, a0) -
                                       setrl::theory::q_star_eval(pinned, states, a0));
    if (std::abs(pinned_err - 0.1) > 1e-12) ++violations;
    if (positive_n3 != ce_trials) ++violations;
    total_violations += violations;
    write_json(out / "counterexample.json",
               Json{{"trials", ce_trials},
                    {"max_small_n_gap", max_small_gap},
                    {"pinned_error", pinned_err},
                    {"n3_positive_fraction", static_cast<double>(positive_n3) / ce_trials},
                    {"violations", violations}});
  }

  {  // lemma suite
    const long lemma_trials = j.value("lemma_trials", 1000L);
    auto reports = setrl::theory::lemma_suite(lemma_trials, rng);
    Json rows = Json::array();
    long violations = 0;
    for (const auto& rep : reports) {
      rows.push_back(
          Json{{"lemma", rep.lemma}, {"trials", rep.trials}, {"violations", rep.violations}});
      violations += rep.violations;
    }
    total_violations += violations;
    write_json(out / "lemmas.json", Json{{"rows", rows}, {"violations", violations}});
  }

  std::cout << "theory verification: " << total_violations << " violations; reports in " << out
            << "\n";
  return total_violations == 0 ? kExitOk : kExitFailure;
}

// ---- reward-audit ----

struct AuditResult {
  double rho_chamfer_gt = 0.0;
  double rho_smorl_gt = 0.0;
  long steps = 0;
};

AuditResult run_audit(const setrl::RunConfig& cfg, int episodes, std::uint64_t seed,
                      const fs::path& csv_path) {
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "episode,t,gt_reward,chamfer_reward,smorl_reward\n";
  csv.precision(17);
  std::vector<double> gt, cham, smorl;
  auto reward_gt = setrl::make_gt_reward(cfg.task);
  auto reward_ch = setrl::make_chamfer_reward(cfg.reward, cfg.reward_distance);
  auto reward_sm = setrl::make_smorl_reward(cfg.reward);
  const int horizon = setrl::effective_horizon(cfg.task);
  for (int e = 0; e < episodes; ++e) {
    auto rng = setrl::make_rng(setrl::derive_seed(seed, static_cast<std::uint64_t>(e)));
    auto [s, g] = setrl::reset(cfg.task, rng);
    const auto goal_sets = setrl::encode_goal(g, cfg.encoder, rng);
    for (int t = 0; t < horizon; ++t) {
      Eigen::Vector2d a(setrl::uniform(rng, -cfg.task.a_max, cfg.task.a_max),
                        setrl::uniform(rng, -cfg.task.a_max, cfg.task.a_max));
      s = setrl::step(s, a, cfg.task);
      setrl::Transition tr;
      tr.next_obs.state_sets = setrl::encode_state(s, cfg.encoder, rng);
      tr.next_obs.goal_sets = goal_sets;
      tr.achieved_goal = setrl::GoalConfig{s.object_pos, s.object_code};
      tr.desired_goal = g;
      const double r_gt = reward_gt(tr);
      const double r_ch = reward_ch(tr);
      const double r_sm = reward_sm(tr);
      csv << e << ',' << t << ',' << r_gt << ',' << r_ch << ',' << r_sm << "\n";
      gt.push_back(r_gt);
      cham.push_back(r_ch);
      smorl.push_back(r_sm);
    }
  }
  AuditResult res;
  res.steps = static_cast<long>(gt.size());
  res.rho_chamfer_gt = setrl::spearman(cham, gt);
  res.rho_smorl_gt = setrl::spearman(smorl, gt);
  return res;
}

int cmd_reward_audit(const std::string& config_path, const std::string& out_override) {
  setrl::RunConfig cfg = setrl::load_run_config(config_path, environ);
  std::ifstream is(config_path);
  Json j = Json::parse(is);
  setrl::apply_env_overrides(j, environ);
  const Json audit = j.value("audit", Json::object());
  const int episodes = audit.value("episodes", 40);
  const Json occl = audit.value("occluded_dropout", Json::array({0.3, 0.0}));

  const fs::path out(out_override.empty() ? cfg.output_dir : out_override);
  fs::create_directories(out);

  AuditResult clean = run_audit(cfg, episodes, cfg.seed, out / "audit.csv");

  setrl::RunConfig occluded = cfg;
  for (std::size_t k = 0; k < occluded.encoder.views.size() && k < occl.size(); ++k)
    occluded.encoder.views[k].dropout_prob = occl[k].get<double>();
  AuditResult shadowed = run_audit(occluded, episodes, cfg.seed, out / "audit_occluded.csv");

  Json stats{{"episodes", episodes},
             {"steps", clean.steps},
             {"rho_chamfer_gt", clean.rho_chamfer_gt},
             {"rho_smorl_gt", clean.rho_smorl_gt},
             {"rho_chamfer_gt_occluded", shadowed.rho_chamfer_gt},
             {"rho_smorl_gt_occluded", shadowed.rho_smorl_gt}};
  write_json(out / "audit_stats.json", stats);
  std::cout << "rho(chamfer, gt) = " << clean.rho_chamfer_gt
            << "  occluded = " << shadowed.rho_chamfer_gt << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"entity-set RL workbench: training, evaluation, theory checks, reward audits"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, n_objects, out_dir, variant;
  int episodes = 400;
  std::uint64_t seed = static_cast<std::uint64_t>(-1);
  bool dump_traj = false;

  auto* train = app.add_subcommand("train", "train an agent from a run config");
  train->add_option("--config", config_path, "run config JSON")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint across object counts");
  eval->add_option("--checkpoint", checkpoint, "checkpoint .bin path")->required();
  eval->add_option("--config", config_path, "optional config override");
  eval->add_option("--n-objects", n_objects, "counts: '3', '1,2,3' or '1..6'");
  eval->add_option("--episodes", episodes, "episodes per object count");
  eval->add_option("--seed", seed, "evaluation seed override");
  eval->add_option("--out", out_dir, "output directory");
  eval->add_option("--variant", variant, "task variant override (e.g. sorting)");
  eval->add_flag("--dump-trajectories", dump_traj, "write one trajectory JSONL per count");

  auto* theory = app.add_subcommand("verify-theory", "run the theory certification suite");
  theory->add_option("--config", config_path, "theory config JSON")->required();
  theory->add_option("--out", out_dir, "output directory override");

  auto* audit = app.add_subcommand("reward-audit", "compare reward channels on random rollouts");
  audit->add_option("--config", config_path, "run config JSON")->required();
  audit->add_option("--out", out_dir, "output directory override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed())
      return cmd_eval(checkpoint, config_path, n_objects, episodes, seed, out_dir, variant,
                      dump_traj);
    if (theory->parsed()) return cmd_verify_theory(config_path, out_dir);
    if (audit->parsed()) return cmd_reward_audit(config_path, out_dir);
  } catch (const setrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const setrl::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
