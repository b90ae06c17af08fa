#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "setrl/chamfer.hpp"
#include "setrl/eit.hpp"
#include "setrl/env.hpp"
#include "setrl/params.hpp"

// TD3 + hindsight relabeling over set-valued observations: twin critics with
// clipped-noise targets, delayed actor updates, polyak-averaged target
// networks and linearly decaying exploration. Episodes end by time limit
// only, so targets always bootstrap.

namespace setrl {

struct Transition {
  Observation obs;
  Eigen::Vector2d action;
  Observation next_obs;
  GoalConfig achieved_goal;  // object snapshot after the action
  GoalConfig desired_goal;
  double reward = 0.0;
  int t = 0;
  bool done_by_horizon = false;
};

struct Episode {
  std::vector<Transition> steps;
};

struct TrainConfig {
  double lr = 5e-4;
  int batch = 512;
  double gamma = 0.98;
  double tau = 0.05;
  int episodes_per_loop = 16;
  double update_to_data = 0.5;  // gradient updates per environment step
  double her_ratio = 0.8;
  double sigma0 = 0.2;  // exploration noise, fraction of a_max
  double eps0 = 0.3;    // epsilon-greedy probability
  long buffer_capacity = 100000;
  int policy_delay = 2;
  double target_noise = 0.2;  // fraction of a_max
  double noise_clip = 0.5;    // fraction of a_max
  long total_env_steps = 200000;
  long eval_every = 5000;
  int eval_goals = 96;
  double stop_at_success = -1.0;  // stop once eval success reaches this; <0 disables
  double divergence_loss_threshold = 1e6;
  int divergence_windows = 3;
  long checkpoint_every = 50000;

  void validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
    if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("tau must be in (0,1]");
    if (her_ratio < 0.0 || her_ratio > 1.0) throw std::invalid_argument("her_ratio in [0,1]");
    if (batch < 1 || episodes_per_loop < 1 || buffer_capacity < 1)
      throw std::invalid_argument("bad train config");
  }
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- replay ----

// Whole episodes in a FIFO ring with an exact transition-count capacity.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(long capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("buffer capacity must be >= 1");
  }

  void push(Episode e) {
    size_ += static_cast<long>(e.steps.size());
    episodes_.push_back(std::move(e));
    while (size_ > capacity_ && !episodes_.empty()) {
      size_ -= static_cast<long>(episodes_.front().steps.size());
      episodes_.pop_front();
    }
    prefix_dirty_ = true;
  }

  long size() const { return size_; }
  long capacity() const { return capacity_; }
  std::size_t episode_count() const { return episodes_.size(); }

  // (episode index, step index) of a transition drawn uniformly over all
  // stored transitions.
  std::pair<std::size_t, int> sample_index(Rng& rng) const {
    if (size_ == 0) throw std::runtime_error("replay buffer empty");
    rebuild_prefix();
    const long pick = std::uniform_int_distribution<long>(0, size_ - 1)(rng);
    std::size_t lo = 0, hi = episodes_.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (prefix_[mid + 1] <= pick)
        lo = mid + 1;
      else
        hi = mid;
    }
    return {lo, static_cast<int>(pick - prefix_[lo])};
  }

  const Episode& episode(std::size_t i) const { return episodes_[i]; }

 private:
  void rebuild_prefix() const {
    if (!prefix_dirty_) return;
    prefix_.assign(episodes_.size() + 1, 0);
    for (std::size_t i = 0; i < episodes_.size(); ++i)
      prefix_[i + 1] = prefix_[i] + static_cast<long>(episodes_[i].steps.size());
    prefix_dirty_ = false;
  }

  std::deque<Episode> episodes_;
  long size_ = 0;
  long capacity_;
  mutable std::vector<long> prefix_;
  mutable bool prefix_dirty_ = true;
};

// ---- hindsight relabeling ----

// Recomputes the reward of a (possibly relabeled) transition.
using TransitionReward = std::function<double(const Transition&)>;

struct RelabelContext {
  const EncoderConfig* encoder = nullptr;
  TransitionReward reward;
};

// Swaps in a new desired goal, re-encodes the goal sets of both observations
// through the entity model, and recomputes the reward.
inline Transition relabel_with_goal(const Transition& tr, const GoalConfig& new_goal,
                                    const RelabelContext& ctx, Rng& rng) {
  Transition out = tr;
  out.desired_goal = new_goal;
  const auto goal_sets = encode_goal(new_goal, *ctx.encoder, rng);
  out.obs.goal_sets = goal_sets;
  out.next_obs.goal_sets = goal_sets;
  out.reward = ctx.reward(out);
  return out;
}

// The "future" strategy: each transition keeps its goal with probability
// 1 - ratio, otherwise adopts the achieved goal of a uniformly drawn step at
// or after its own index.
inline std::vector<Transition> her_relabel(const Episode& episode, double ratio,
                                           const RelabelContext& ctx, Rng& rng) {
  std::vector<Transition> out;
  out.reserve(episode.steps.size());
  const int len = static_cast<int>(episode.steps.size());
  for (int t = 0; t < len; ++t) {
    if (ratio > 0.0 && uniform(rng, 0.0, 1.0) < ratio) {
      const int u = uniform_int(rng, t, len - 1);
      out.push_back(relabel_with_goal(episode.steps[t], episode.steps[u].achieved_goal, ctx, rng));
    } else {
      out.push_back(episode.steps[t]);
    }
  }
  return out;
}

// ---- exploration ----

inline double exploration_sigma(double sigma0, double progress) {
  return sigma0 * (1.0 - progress / 2.0);
}

inline double exploration_epsilon(double eps0, double progress) {
  return eps0 * (1.0 - progress / 2.0);
}

// Epsilon-greedy plus Gaussian noise, both decaying to half their initial
// value over training; noise scales are fractions of a_max.
inline Eigen::Vector2d explore_action(const Eigen::Vector2d& policy_action, double progress,
                                      double sigma0, double eps0, Rng& rng, double a_max) {
  if (progress < 0.0 || progress > 1.0) throw std::invalid_argument("progress must be in [0,1]");
  const double eps = exploration_epsilon(eps0, progress);
  if (eps > 0.0 && uniform(rng, 0.0, 1.0) < eps)
    return {uniform(rng, -a_max, a_max), uniform(rng, -a_max, a_max)};
  Eigen::Vector2d a = policy_action;
  const double sigma = exploration_sigma(sigma0, progress) * a_max;
  if (sigma > 0.0) {
    a.x() += gaussian(rng, 0.0, sigma);
    a.y() += gaussian(rng, 0.0, sigma);
  }
  return a.cwiseMax(-a_max).cwiseMin(a_max);
}

// ---- network family: EIT actor-critic ----

template <class S>
struct EITFamily {
  EITConfig cfg;
  EITParams actor_p, critic_p;

  void build(ParamStore<S>& actor, ParamStore<S>& critic1, ParamStore<S>& critic2, Rng& rng) {
    actor_p = build_eit(actor, cfg, rng, false, cfg.action_dim, "actor");
    critic_p = build_eit(critic1, cfg, rng, true, 1, "critic");
    (void)build_eit(critic2, cfg, rng, true, 1, "critic");  // identical layout
  }

  using Batch = SetBatch<S>;
  Batch make_batch(const std::vector<const Observation*>& obs, bool with_action) const {
    return build_set_batch<S>(obs, cfg, with_action);
  }
  ad::Var policy(ad::Tape<S>& t, const std::vector<ad::Var>& w, const Batch& b) const {
    return eit_policy_batch(t, w, actor_p, cfg, b);
  }
  ad::Var q(ad::Tape<S>& t, const std::vector<ad::Var>& w, const Batch& b, ad::Var action) const {
    return eit_q_batch(t, w, critic_p, cfg, b, action);
  }
  Eigen::Vector2d policy_single(const ParamStore<S>& actor, const Observation& obs) const {
    return eit_policy_forward(actor, actor_p, cfg, obs);
  }
  double a_max() const { return cfg.a_max; }
};

// ---- unstructured family ----

template <class S>
struct UnstructuredFamily {
  UnstructuredConfig cfg;
  UnstructuredParams actor_p, critic_p;

  void build(ParamStore<S>& actor, ParamStore<S>& critic1, ParamStore<S>& critic2, Rng& rng) {
    actor_p = build_unstructured(actor, cfg, rng, false, cfg.action_dim, "actor");
    critic_p = build_unstructured(critic1, cfg, rng, true, 1, "critic");
    (void)build_unstructured(critic2, cfg, rng, true, 1, "critic");
  }

  struct Batch {
    ad::Mat<S> rows;  // B x input_width(without action)
  };
  Batch make_batch(const std::vector<const Observation*>& obs, bool) const {
    Batch b;
    b.rows.resize(static_cast<int>(obs.size()), cfg.input_width(false));
    for (std::size_t i = 0; i < obs.size(); ++i)
      b.rows.row(static_cast<int>(i)) = unstructured_input<S>(*obs[i], cfg);
    return b;
  }
  ad::Var policy(ad::Tape<S>& t, const std::vector<ad::Var>& w, const Batch& b) const {
    ad::Var h = unstructured_batch(t, w, actor_p, t.leaf(b.rows));
    return t.scale(t.tanh_op(h), static_cast<S>(cfg.a_max));
  }
  ad::Var q(ad::Tape<S>& t, const std::vector<ad::Var>& w, const Batch& b, ad::Var action) const {
    return unstructured_batch(t, w, critic_p, t.concat_cols(t.leaf(b.rows), action));
  }
  Eigen::Vector2d policy_single(const ParamStore<S>& actor, const Observation& obs) const {
    return unstructured_forward(actor, actor_p, cfg, obs);
  }
  double a_max() const { return cfg.a_max; }
};

// ---- losses ----

template <class S>
struct LossResult {
  double loss = 0.0;
  std::vector<ad::Mat<S>> grads1, grads2;  // grads2 used by the twin critic
};

// TD3 critic loss: y = r + gamma * min(Q1', Q2')(s', clip(pi'(s') + noise));
// mean squared error over both critics. No terminal bootstrap cut: episodes
// end by time limit only.
template <class S, class Family>
LossResult<S> critic_loss(const Family& fam, std::span<const Transition> batch,
                          const ParamStore<S>& critic1, const ParamStore<S>& critic2,
                          const ParamStore<S>& critic1_t, const ParamStore<S>& critic2_t,
                          const ParamStore<S>& actor_t, const TrainConfig& tc, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("critic_loss: empty batch");
  const int B = static_cast<int>(batch.size());
  std::vector<const Observation*> obs, next_obs;
  obs.reserve(batch.size());
  next_obs.reserve(batch.size());
  ad::Mat<S> actions(B, 2);
  for (int i = 0; i < B; ++i) {
    obs.push_back(&batch[i].obs);
    next_obs.push_back(&batch[i].next_obs);
    actions(i, 0) = static_cast<S>(batch[i].action.x());
    actions(i, 1) = static_cast<S>(batch[i].action.y());
  }
  const double a_max = fam.a_max();

  // target side, no gradients
  ad::Mat<S> y(B, 1);
  {
    ad::Tape<S> t(false);
    auto bn_pi = fam.make_batch(next_obs, false);
    auto bn = fam.make_batch(next_obs, true);
    auto wa = bind_store(t, actor_t, false);
    ad::Var next_a = fam.policy(t, wa, bn_pi);
    ad::Mat<S> na = t.val(next_a);
    const double clip = tc.noise_clip * a_max;
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < 2; ++j) {
        const double nz =
            std::clamp(gaussian(rng, 0.0, tc.target_noise * a_max), -clip, clip);
        na(i, j) = static_cast<S>(
            std::clamp(static_cast<double>(na(i, j)) + nz, -a_max, a_max));
      }
    }
    ad::Var na_var = t.leaf(na);
    auto w1 = bind_store(t, critic1_t, false);
    auto w2 = bind_store(t, critic2_t, false);
    ad::Var q1 = fam.q(t, w1, bn, na_var);
    ad::Var q2 = fam.q(t, w2, bn, na_var);
    for (int i = 0; i < B; ++i) {
      const double target_q =
          std::min(static_cast<double>(t.val(q1)(i, 0)), static_cast<double>(t.val(q2)(i, 0)));
      y(i, 0) = static_cast<S>(batch[i].reward + tc.gamma * target_q);
    }
  }

  LossResult<S> res;
  ad::Tape<S> t;
  auto b = fam.make_batch(obs, true);
  ad::Var act = t.leaf(actions);
  auto w1 = bind_store(t, critic1, true);
  auto w2 = bind_store(t, critic2, true);
  ad::Var l1 = t.mse_vs_const(fam.q(t, w1, b, act), y);
  ad::Var l2 = t.mse_vs_const(fam.q(t, w2, b, act), y);
  ad::Var loss = t.add(l1, l2);
  res.loss = static_cast<double>(t.val(loss)(0, 0));
  if (!std::isfinite(res.loss))
    throw DivergenceError("critic loss is not finite (NaN/Inf in forward)");
  t.backward(loss);
  res.grads1 = collect_grads(t, w1);
  res.grads2 = collect_grads(t, w2);
  return res;
}

// Deterministic policy gradient surrogate: minimize -Q1(s, pi(s, g), g).
template <class S, class Family>
LossResult<S> actor_loss(const Family& fam, std::span<const Transition> batch,
                         const ParamStore<S>& actor, const ParamStore<S>& critic1) {
  if (batch.empty()) throw std::invalid_argument("actor_loss: empty batch");
  std::vector<const Observation*> obs;
  obs.reserve(batch.size());
  for (const auto& tr : batch) obs.push_back(&tr.obs);
  LossResult<S> res;
  ad::Tape<S> t;
  auto wa = bind_store(t, actor, true);
  auto wc = bind_store(t, critic1, false);  // gradients flow through the action only
  auto bp = fam.make_batch(obs, false);
  auto bq = fam.make_batch(obs, true);
  ad::Var a = fam.policy(t, wa, bp);
  ad::Var q = fam.q(t, wc, bq, a);
  ad::Var loss = t.scale(t.mean_all(q), S(-1));
  res.loss = static_cast<double>(t.val(loss)(0, 0));
  if (!std::isfinite(res.loss))
    throw DivergenceError("actor loss is not finite (NaN/Inf in forward)");
  t.backward(loss);
  res.grads1 = collect_grads(t, wa);
  return res;
}

// ---- training loop ----

struct MetricRecord {
  long env_steps = 0;
  double success_rate = 0.0;
  double success_fraction = 0.0;
  double max_obj_dist = 0.0;
  double avg_obj_dist = 0.0;
  double avg_return = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
};

struct TrainHooks {
  std::function<void(const MetricRecord&)> on_metrics;
  std::function<void(long env_steps)> on_checkpoint;
};

struct TrainStats {
  std::vector<MetricRecord> metrics;
  long env_steps = 0;
  bool stopped_early = false;
};

template <class S, class Family>
struct Trainer {
  Family fam;
  TaskConfig task;
  EncoderConfig encoder;
  TrainConfig tc;
  TransitionReward reward_fn;

  ParamStore<S> actor, critic1, critic2;
  ParamStore<S> actor_t, critic1_t, critic2_t;

  Trainer(Family f, TaskConfig task_, EncoderConfig enc_, TrainConfig tc_,
          TransitionReward reward, std::uint64_t seed)
      : fam(std::move(f)), task(std::move(task_)), encoder(std::move(enc_)), tc(tc_),
        reward_fn(std::move(reward)) {
    tc.validate();
    auto init_rng = make_rng(derive_seed(seed, 1));
    fam.build(actor, critic1, critic2, init_rng);
    actor_t = actor;
    critic1_t = critic1;
    critic2_t = critic2;
  }

  Episode collect_episode(double progress, std::uint64_t seed_env, std::uint64_t seed_noise) {
    auto env_rng = make_rng(seed_env);
    auto noise_rng = make_rng(seed_noise);
    auto [s, g] = reset(task, env_rng);
    const auto goal_sets = encode_goal(g, encoder, env_rng);
    Observation obs;
    obs.state_sets = encode_state(s, encoder, env_rng);
    obs.goal_sets = goal_sets;
    const int horizon = effective_horizon(task);
    Episode ep;
    ep.steps.reserve(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) {
      const Eigen::Vector2d pi_a = fam.policy_single(actor, obs);
      const Eigen::Vector2d a =
          explore_action(pi_a, progress, tc.sigma0, tc.eps0, noise_rng, fam.a_max());
      SimState next = step(s, a, task);
      Observation next_obs;
      next_obs.state_sets = encode_state(next, encoder, env_rng);
      next_obs.goal_sets = goal_sets;
      Transition tr;
      tr.obs = std::move(obs);
      tr.action = a;
      tr.next_obs = next_obs;
      tr.achieved_goal = GoalConfig{next.object_pos, next.object_code};
      tr.desired_goal = g;
      tr.t = t;
      tr.done_by_horizon = t == horizon - 1;
      tr.reward = reward_fn(tr);
      ep.steps.push_back(std::move(tr));
      obs = std::move(next_obs);
      s = next;
    }
    return ep;
  }

  // Greedy-policy evaluation on `count` held-out goals.
  MetricRecord evaluate(long env_steps, int count, std::uint64_t eval_seed) {
    MetricRecord rec;
    rec.env_steps = env_steps;
    const int horizon = effective_horizon(task);
    for (int e = 0; e < count; ++e) {
      auto rng = make_rng(derive_seed(eval_seed, static_cast<std::uint64_t>(e)));
      auto [s, g] = reset(task, rng);
      const auto goal_sets = encode_goal(g, encoder, rng);
      std::vector<SimState> traj = {s};
      for (int t = 0; t < horizon; ++t) {
        Observation obs;
        obs.state_sets = encode_state(s, encoder, rng);
        obs.goal_sets = goal_sets;
        s = step(s, fam.policy_single(actor, obs), task);
        traj.push_back(s);
      }
      const Metrics m = episode_metrics(traj, g, task);
      rec.success_rate += m.success;
      rec.success_fraction += m.success_fraction;
      rec.max_obj_dist += m.max_obj_dist;
      rec.avg_obj_dist += m.avg_obj_dist;
      rec.avg_return += m.avg_return;
    }
    const double inv = 1.0 / count;
    rec.success_rate *= inv;
    rec.success_fraction *= inv;
    rec.max_obj_dist *= inv;
    rec.avg_obj_dist *= inv;
    rec.avg_return *= inv;
    return rec;
  }

  Transition sample_relabeled(ReplayBuffer& buffer, const RelabelContext& ctx, Rng& her_rng) {
    const auto [ei, ti] = buffer.sample_index(her_rng);
    const Episode& ep = buffer.episode(ei);
    if (tc.her_ratio > 0.0 && uniform(her_rng, 0.0, 1.0) < tc.her_ratio) {
      const int u = uniform_int(her_rng, ti, static_cast<int>(ep.steps.size()) - 1);
      return relabel_with_goal(ep.steps[static_cast<std::size_t>(ti)],
                               ep.steps[static_cast<std::size_t>(u)].achieved_goal, ctx, her_rng);
    }
    return ep.steps[static_cast<std::size_t>(ti)];
  }

  TrainStats run(std::uint64_t seed, const TrainHooks& hooks = {}) {
    ReplayBuffer buffer(tc.buffer_capacity);
    RelabelContext ctx{&encoder, reward_fn};
    Adam<S> opt_actor(tc.lr), opt_c1(tc.lr), opt_c2(tc.lr);
    auto her_rng = make_rng(derive_seed(seed, 2));
    auto target_rng = make_rng(derive_seed(seed, 3));
    TrainStats stats;
    long env_steps = 0;
    long next_eval = tc.eval_every;
    long next_checkpoint = tc.checkpoint_every;
    double update_budget = 0.0;
    long update_count = 0;
    double window_loss_sum = 0.0;
    long window_loss_n = 0;
    int bad_windows = 0;
    std::uint64_t episode_counter = 0;

    while (env_steps < tc.total_env_steps) {
      const double progress =
          std::min(1.0, static_cast<double>(env_steps) / static_cast<double>(tc.total_env_steps));
      for (int e = 0; e < tc.episodes_per_loop; ++e) {
        ++episode_counter;
        // disjoint substream namespaces: episodes, noise, eval
        Episode ep =
            collect_episode(progress, derive_seed(seed, (1ULL << 32) + 2 * episode_counter),
                            derive_seed(seed, (1ULL << 32) + 2 * episode_counter + 1));
        env_steps += static_cast<long>(ep.steps.size());
        buffer.push(std::move(ep));
      }
      update_budget += tc.update_to_data * tc.episodes_per_loop * effective_horizon(task);

      std::vector<Transition> batch;
      while (update_budget >= 1.0 && buffer.size() >= static_cast<long>(tc.batch)) {
        update_budget -= 1.0;
        batch.clear();
        for (int i = 0; i < tc.batch; ++i) batch.push_back(sample_relabeled(buffer, ctx, her_rng));
        auto closs = critic_loss(fam, std::span<const Transition>(batch), critic1, critic2,
                                 critic1_t, critic2_t, actor_t, tc, target_rng);
        opt_c1.step(critic1, closs.grads1);
        opt_c2.step(critic2, closs.grads2);
        window_loss_sum += closs.loss;
        ++window_loss_n;
        ++update_count;
        if (update_count % tc.policy_delay == 0) {
          auto aloss = actor_loss(fam, std::span<const Transition>(batch), actor, critic1);
          opt_actor.step(actor, aloss.grads1);
          last_actor_loss_ = aloss.loss;
          polyak_update(actor_t, actor, tc.tau);
          polyak_update(critic1_t, critic1, tc.tau);
          polyak_update(critic2_t, critic2, tc.tau);
        }
      }

      if (env_steps >= next_eval || env_steps >= tc.total_env_steps) {
        MetricRecord rec =
            evaluate(env_steps, tc.eval_goals,
                     derive_seed(seed, (2ULL << 32) + static_cast<std::uint64_t>(
                                                          next_eval / tc.eval_every)));
        rec.critic_loss = window_loss_n > 0 ? window_loss_sum / window_loss_n : 0.0;
        rec.actor_loss = last_actor_loss_;
        if (window_loss_n > 0 && rec.critic_loss > tc.divergence_loss_threshold) {
          if (++bad_windows >= tc.divergence_windows)
            throw DivergenceError("critic loss exceeded threshold for consecutive windows");
        } else {
          bad_windows = 0;
        }
        window_loss_sum = 0.0;
        window_loss_n = 0;
        stats.metrics.push_back(rec);
        if (hooks.on_metrics) hooks.on_metrics(rec);
        while (next_eval <= env_steps) next_eval += tc.eval_every;
        if (tc.stop_at_success >= 0.0 && rec.success_rate >= tc.stop_at_success) {
          stats.stopped_early = true;
          break;
        }
      }
      if (hooks.on_checkpoint && env_steps >= next_checkpoint) {
        hooks.on_checkpoint(env_steps);
        while (next_checkpoint <= env_steps) next_checkpoint += tc.checkpoint_every;
      }
    }
    stats.env_steps = env_steps;
    return stats;
  }

 private:
  double last_actor_loss_ = 0.0;
};

// GT reward on the relabeled pair: mean negative normalized distance between
// achieved and desired goals, position-matched by code.
inline TransitionReward make_gt_reward(const TaskConfig& task) {
  return [task](const Transition& tr) {
    SimState s;
    s.object_pos = tr.achieved_goal.pos;
    s.object_code = tr.achieved_goal.code;
    return gt_reward(s, tr.desired_goal, task);
  };
}

inline TransitionReward make_chamfer_reward(const RewardConfig& rcfg, const DistancePair& d,
                                            double min_reward = -2.0) {
  return [rcfg, d, min_reward](const Transition& tr) {
    try {
      return chamfer_reward(tr.next_obs, rcfg, d);
    } catch (const std::runtime_error&) {
      return min_reward;  // all views empty after filtering
    }
  };
}

// Single-goal reward over the first goal entity in each view.
inline TransitionReward make_smorl_reward(const RewardConfig& rcfg) {
  return [rcfg](const Transition& tr) {
    std::vector<Particle> goal_per_view;
    for (const auto& set : tr.next_obs.goal_sets) {
      const Particle* chosen = nullptr;
      for (const auto& p : set.particles) {
        if (p.transparency < 0.5) continue;
        if (chosen == nullptr || p.entity_tag < chosen->entity_tag) chosen = &p;
      }
      if (chosen == nullptr) return rcfg.smorl_min_reward;
      goal_per_view.push_back(*chosen);
    }
    return smorl_reward(tr.next_obs, goal_per_view, rcfg.match_threshold,
                        rcfg.smorl_min_reward);
  };
}

}  // namespace setrl
