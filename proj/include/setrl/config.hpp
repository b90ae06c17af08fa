#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "setrl/chamfer.hpp"
#include "setrl/eit.hpp"
#include "setrl/entity.hpp"
#include "setrl/env.hpp"
#include "setrl/td3.hpp"

// Run configuration: one JSON document covering task, encoder, reward,
// network and training. Every default is either a published hyper-parameter
// default or an artifact choice documented in schemas/run_config.schema.json.
// Environment variables prefixed SETRL_ override keys, with "__" separating
// path segments (SETRL_TRAIN__LR=1e-3 sets /train/lr).

namespace setrl {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RewardType { gt, chamfer, smorl };
enum class NetType { eit, unstructured };
enum class Precision { f32, f64 };

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/out";
  Precision precision = Precision::f32;
  TaskConfig task;
  EncoderConfig encoder;
  RewardType reward_type = RewardType::gt;
  RewardConfig reward;
  DistancePair reward_distance;  // D1 = L1 on position, D2 = L2 on features
  NetType net_type = NetType::eit;
  EITConfig net;
  UnstructuredConfig unstructured;
  TrainConfig train;
};

namespace detail {

inline Variant parse_variant(const std::string& s) {
  if (s == "plain") return Variant::plain;
  if (s == "adjacent_goals") return Variant::adjacent_goals;
  if (s == "small_table") return Variant::small_table;
  if (s == "ordered_push") return Variant::ordered_push;
  if (s == "sorting") return Variant::sorting;
  throw ConfigError("unknown task variant: " + s);
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::adjacent_goals: return "adjacent_goals";
    case Variant::small_table: return "small_table";
    case Variant::ordered_push: return "ordered_push";
    case Variant::sorting: return "sorting";
  }
  return "plain";
}

inline EntityDistance parse_distance(const std::string& s) {
  if (s == "l1_pos") return EntityDistance::l1_pos;
  if (s == "l2_pos") return EntityDistance::l2_pos;
  if (s == "l2_feat") return EntityDistance::l2_feat;
  if (s == "sq_l2_full") return EntityDistance::sq_l2_full;
  throw ConfigError("unknown distance kind: " + s);
}

inline std::string distance_name(EntityDistance d) {
  switch (d) {
    case EntityDistance::l1_pos: return "l1_pos";
    case EntityDistance::l2_pos: return "l2_pos";
    case EntityDistance::l2_feat: return "l2_feat";
    case EntityDistance::sq_l2_full: return "sq_l2_full";
  }
  return "l1_pos";
}

inline long default_buffer_capacity(int n_objects) {
  return n_objects >= 3 ? 200000 : 100000;
}

// byte offset -> "line:column" for parse error anchors
inline std::string line_anchor(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

}  // namespace detail

inline RunConfig config_from_json(const Json& j) {
  RunConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.output_dir = j.value("output_dir", std::string("runs/out"));
  const std::string prec = j.value("precision", std::string("f32"));
  if (prec != "f32" && prec != "f64") throw ConfigError("precision must be f32 or f64");
  cfg.precision = prec == "f32" ? Precision::f32 : Precision::f64;

  const Json task = j.value("task", Json::object());
  cfg.task.n_objects = task.value("n_objects", 1);
  cfg.task.variant = detail::parse_variant(task.value("variant", std::string("plain")));
  cfg.task.horizon = task.value("horizon", 0);
  cfg.task.object_radius = task.value("object_radius", 0.04);
  cfg.task.agent_radius = task.value("agent_radius", 0.03);
  cfg.task.success_radius = task.value("success_radius", cfg.task.object_radius);
  cfg.task.norm_constant = task.value("norm_constant", 1.0);
  cfg.task.a_max = task.value("a_max", 0.05);
  cfg.task.adjacency_gap = task.value("adjacency_gap", 0.01);
  cfg.task.corridor_width_factor = task.value("corridor_width_factor", 2.2);
  cfg.task.sorting_colors = task.value("sorting_colors", 3);

  const Json enc = j.value("encoder", Json::object());
  const int views = enc.value("views", 2);
  const double jitter = enc.value("jitter_sigma", 0.002);
  cfg.encoder.views = default_views(views, jitter);
  if (enc.contains("dropout_prob")) {
    const Json& d = enc["dropout_prob"];
    if (d.is_array()) {
      if (static_cast<int>(d.size()) != views)
        throw ConfigError("dropout_prob array must have one entry per view");
      for (int k = 0; k < views; ++k) cfg.encoder.views[k].dropout_prob = d[k].get<double>();
    } else {
      for (auto& v : cfg.encoder.views) v.dropout_prob = d.get<double>();
    }
  }
  cfg.encoder.feature_len = enc.value("feature_len", 4);
  cfg.encoder.decoys_per_view = enc.value("decoys_per_view", 2);
  cfg.encoder.guarantee_visibility = enc.value("guarantee_visibility", true);

  const Json reward = j.value("reward", Json::object());
  const std::string rt = reward.value("type", std::string("gt"));
  if (rt == "gt")
    cfg.reward_type = RewardType::gt;
  else if (rt == "chamfer")
    cfg.reward_type = RewardType::chamfer;
  else if (rt == "smorl")
    cfg.reward_type = RewardType::smorl;
  else
    throw ConfigError("reward.type must be gt, chamfer or smorl");
  cfg.reward.eps = reward.value("eps", 1e-8);
  cfg.reward.match_threshold = reward.value("match_threshold", 0.5);
  cfg.reward.no_match_bonus = reward.value("no_match_bonus", -0.2);
  cfg.reward.smorl_min_reward = reward.value("smorl_min_reward", -1.0);
  cfg.reward_distance.measure =
      detail::parse_distance(reward.value("measure_distance", std::string("l1_pos")));
  cfg.reward_distance.match =
      detail::parse_distance(reward.value("match_distance", std::string("l2_feat")));
  const int n_colors =
      cfg.task.variant == Variant::sorting ? cfg.task.sorting_colors : cfg.task.n_objects;
  for (int c = 0; c < n_colors; ++c)
    cfg.reward.interest_codes.push_back(object_code(c, cfg.encoder.feature_len));

  const Json net = j.value("net", Json::object());
  const std::string nt = net.value("type", std::string("eit"));
  if (nt == "eit")
    cfg.net_type = NetType::eit;
  else if (nt == "unstructured")
    cfg.net_type = NetType::unstructured;
  else
    throw ConfigError("net.type must be eit or unstructured");
  cfg.net.feature_len = cfg.encoder.feature_len;
  cfg.net.views = views;
  cfg.net.dim = net.value("dim", 64);
  cfg.net.heads = net.value("heads", 8);
  cfg.net.ff_hidden = net.value("ff_hidden", 256);
  cfg.net.head_hidden = net.value("head_hidden", 256);
  cfg.net.head_layers = net.value("head_layers", 3);
  cfg.net.a_max = cfg.task.a_max;
  cfg.unstructured.feature_len = cfg.encoder.feature_len;
  cfg.unstructured.views = views;
  cfg.unstructured.state_entities = cfg.task.n_objects + 1;
  cfg.unstructured.goal_entities =
      cfg.task.variant == Variant::sorting ? cfg.task.sorting_colors : cfg.task.n_objects;
  cfg.unstructured.hidden = net.value("hidden", 256);
  cfg.unstructured.layers = net.value("layers", 5);
  cfg.unstructured.a_max = cfg.task.a_max;

  const Json train = j.value("train", Json::object());
  cfg.train.lr = train.value("lr", 5e-4);
  cfg.train.batch = train.value("batch", 512);
  cfg.train.gamma = train.value("gamma", 0.98);
  cfg.train.tau = train.value("tau", 0.05);
  cfg.train.episodes_per_loop = train.value("episodes_per_loop", 16);
  cfg.train.update_to_data = train.value("update_to_data", 0.5);
  cfg.train.her_ratio = train.value("her_ratio", 0.8);
  cfg.train.sigma0 = train.value("sigma0", 0.2);
  cfg.train.eps0 = train.value("eps0", 0.3);
  cfg.train.buffer_capacity =
      train.value("buffer_capacity", detail::default_buffer_capacity(cfg.task.n_objects));
  cfg.train.policy_delay = train.value("policy_delay", 2);
  cfg.train.target_noise = train.value("target_noise", 0.2);
  cfg.train.noise_clip = train.value("noise_clip", 0.5);
  cfg.train.total_env_steps = train.value("total_env_steps", 200000L);
  cfg.train.eval_every = train.value("eval_every", 5000L);
  cfg.train.eval_goals = train.value("eval_goals", 96);
  cfg.train.stop_at_success = train.value("stop_at_success", -1.0);
  cfg.train.divergence_loss_threshold = train.value("divergence_loss_threshold", 1e6);
  cfg.train.divergence_windows = train.value("divergence_windows", 3);
  cfg.train.checkpoint_every = train.value("checkpoint_every", 50000L);
  cfg.train.validate();
  if (cfg.encoder.guarantee_visibility) validate_encoder(cfg.encoder, cfg.task.n_objects);
  return cfg;
}

// Canonical full-config echo (used for checkpoint sidecars and summaries).
inline Json config_to_json(const RunConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["precision"] = cfg.precision == Precision::f32 ? "f32" : "f64";
  Json task;
  task["n_objects"] = cfg.task.n_objects;
  task["variant"] = detail::variant_name(cfg.task.variant);
  task["horizon"] = effective_horizon(cfg.task);
  task["object_radius"] = cfg.task.object_radius;
  task["agent_radius"] = cfg.task.agent_radius;
  task["success_radius"] = cfg.task.success_radius;
  task["norm_constant"] = cfg.task.norm_constant;
  task["a_max"] = cfg.task.a_max;
  task["adjacency_gap"] = cfg.task.adjacency_gap;
  task["corridor_width_factor"] = cfg.task.corridor_width_factor;
  task["sorting_colors"] = cfg.task.sorting_colors;
  j["task"] = task;
  Json enc;
  enc["views"] = static_cast<int>(cfg.encoder.views.size());
  enc["jitter_sigma"] = cfg.encoder.views.empty() ? 0.0 : cfg.encoder.views[0].jitter_sigma;
  Json drops = Json::array();
  for (const auto& v : cfg.encoder.views) drops.push_back(v.dropout_prob);
  enc["dropout_prob"] = drops;
  enc["feature_len"] = cfg.encoder.feature_len;
  enc["decoys_per_view"] = cfg.encoder.decoys_per_view;
  enc["guarantee_visibility"] = cfg.encoder.guarantee_visibility;
  j["encoder"] = enc;
  Json reward;
  reward["type"] = cfg.reward_type == RewardType::gt
                       ? "gt"
                       : (cfg.reward_type == RewardType::chamfer ? "chamfer" : "smorl");
  reward["eps"] = cfg.reward.eps;
  reward["match_threshold"] = cfg.reward.match_threshold;
  reward["no_match_bonus"] = cfg.reward.no_match_bonus;
  reward["smorl_min_reward"] = cfg.reward.smorl_min_reward;
  reward["measure_distance"] = detail::distance_name(cfg.reward_distance.measure);
  reward["match_distance"] = detail::distance_name(cfg.reward_distance.match);
  j["reward"] = reward;
  Json net;
  net["type"] = cfg.net_type == NetType::eit ? "eit" : "unstructured";
  net["dim"] = cfg.net.dim;
  net["heads"] = cfg.net.heads;
  net["ff_hidden"] = cfg.net.ff_hidden;
  net["head_hidden"] = cfg.net.head_hidden;
  net["head_layers"] = cfg.net.head_layers;
  net["hidden"] = cfg.unstructured.hidden;
  net["layers"] = cfg.unstructured.layers;
  j["net"] = net;
  Json train;
  train["lr"] = cfg.train.lr;
  train["batch"] = cfg.train.batch;
  train["gamma"] = cfg.train.gamma;
  train["tau"] = cfg.train.tau;
  train["episodes_per_loop"] = cfg.train.episodes_per_loop;
  train["update_to_data"] = cfg.train.update_to_data;
  train["her_ratio"] = cfg.train.her_ratio;
  train["sigma0"] = cfg.train.sigma0;
  train["eps0"] = cfg.train.eps0;
  train["buffer_capacity"] = cfg.train.buffer_capacity;
  train["policy_delay"] = cfg.train.policy_delay;
  train["target_noise"] = cfg.train.target_noise;
  train["noise_clip"] = cfg.train.noise_clip;
  train["total_env_steps"] = cfg.train.total_env_steps;
  train["eval_every"] = cfg.train.eval_every;
  train["eval_goals"] = cfg.train.eval_goals;
  train["stop_at_success"] = cfg.train.stop_at_success;
  train["divergence_loss_threshold"] = cfg.train.divergence_loss_threshold;
  train["divergence_windows"] = cfg.train.divergence_windows;
  train["checkpoint_every"] = cfg.train.checkpoint_every;
  j["train"] = train;
  return j;
}

// Applies environment overrides SETRL_<PATH>, where "__" separates JSON path
// segments; values parse as JSON when possible, else as strings.
inline void apply_env_overrides(Json& j, char** envp) {
  if (envp == nullptr) return;
  const std::string prefix = "SETRL_";
  for (char** e = envp; *e != nullptr; ++e) {
    std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string path = entry.substr(prefix.size(), eq - prefix.size());
    const std::string value = entry.substr(eq + 1);
    std::string pointer;
    std::string segment;
    std::istringstream ss(path);
    for (std::size_t i = 0; i < path.size();) {
      const auto sep = path.find("__", i);
      segment = path.substr(i, sep == std::string::npos ? std::string::npos : sep - i);
      std::transform(segment.begin(), segment.end(), segment.begin(),
                     [](unsigned char c) { return std::tolower(c); });
      pointer += "/" + segment;
      if (sep == std::string::npos) break;
      i = sep + 2;
    }
    Json parsed;
    try {
      parsed = Json::parse(value);
    } catch (const Json::parse_error&) {
      parsed = value;
    }
    j[Json::json_pointer(pointer)] = parsed;
  }
}

// Reads, overrides and validates a config file; parse errors carry a
// line:column anchor.
inline RunConfig load_run_config(const std::string& path, char** envp = nullptr) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string text = buf.str();
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config parse error at " + path + ":" +
                      detail::line_anchor(text, e.byte) + ": " + e.what());
  }
  apply_env_overrides(j, envp);
  try {
    return config_from_json(j);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config field error in ") + path + ": " + e.what());
  }
}

}  // namespace setrl
