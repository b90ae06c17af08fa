#include <catch2/catch_amalgamated.hpp>

#include "setrl/td3.hpp"

#include "fd_check.hpp"

using namespace setrl;

namespace {

EITConfig tiny_cfg() {
  EITConfig cfg;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.ff_hidden = 16;
  cfg.head_hidden = 16;
  cfg.head_layers = 2;
  cfg.views = 2;
  return cfg;
}

EncoderConfig clean_encoder() {
  EncoderConfig enc;
  enc.views = default_views(2, 0.0);
  enc.decoys_per_view = 0;
  return enc;
}

Episode tiny_episode(const TaskConfig& task, const EncoderConfig& enc, int steps, Rng& rng) {
  auto [s, g] = reset(task, rng);
  const auto goal_sets = encode_goal(g, enc, rng);
  Observation obs;
  obs.state_sets = encode_state(s, enc, rng);
  obs.goal_sets = goal_sets;
  Episode ep;
  auto reward = make_gt_reward(task);
  for (int t = 0; t < steps; ++t) {
    Eigen::Vector2d a(uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05));
    SimState next = step(s, a, task);
    Transition tr;
    tr.obs = obs;
    tr.action = a;
    tr.next_obs.state_sets = encode_state(next, enc, rng);
    tr.next_obs.goal_sets = goal_sets;
    tr.achieved_goal = {next.object_pos, next.object_code};
    tr.desired_goal = g;
    tr.t = t;
    tr.done_by_horizon = t == steps - 1;
    tr.reward = reward(tr);
    obs = tr.next_obs;
    ep.steps.push_back(std::move(tr));
    s = next;
  }
  return ep;
}

}  // namespace

TEST_CASE("constant critics against matching targets give zero loss", "[trainer]") {
  auto rng = make_rng(60);
  const EITConfig cfg = tiny_cfg();
  EITFamily<double> fam{cfg};
  ParamStore<double> actor, c1, c2;
  fam.build(actor, c1, c2, rng);
  ParamStore<double> at = actor, c1t = c1, c2t = c2;

  // constant nets: online Q == -1.48, target Q == -1, reward == -0.5
  for (auto* store : {&c1, &c2, &c1t, &c2t}) {
    for (auto& e : store->entries) e.value.setZero();
  }
  c1[fam.critic_p.head_b.back()](0, 0) = -1.48;
  c2[fam.critic_p.head_b.back()](0, 0) = -1.48;
  c1t[fam.critic_p.head_b.back()](0, 0) = -1.0;
  c2t[fam.critic_p.head_b.back()](0, 0) = -1.0;

  TaskConfig task;
  TrainConfig tc;
  tc.gamma = 0.98;
  auto ep = tiny_episode(task, clean_encoder(), 4, rng);
  for (auto& tr : ep.steps) tr.reward = -0.5;
  auto res = critic_loss(fam, std::span<const Transition>(ep.steps), c1, c2, c1t, c2t, at, tc,
                         rng);
  REQUIRE(res.loss == Catch::Approx(0.0).margin(1e-24));
}

TEST_CASE("critic loss gradients match finite differences", "[trainer]") {
  auto rng = make_rng(61);
  const EITConfig cfg = tiny_cfg();
  EITFamily<double> fam{cfg};
  ParamStore<double> actor, c1, c2;
  fam.build(actor, c1, c2, rng);
  ParamStore<double> at = actor, c1t = c1, c2t = c2;
  TaskConfig task;
  TrainConfig tc;
  auto ep = tiny_episode(task, clean_encoder(), 3, rng);

  auto eval = [&](LossResult<double>* out) {
    auto noise_rng = make_rng(7);  // frozen target noise for determinism
    auto res = critic_loss(fam, std::span<const Transition>(ep.steps), c1, c2, c1t, c2t, at, tc,
                           noise_rng);
    if (out) *out = std::move(res);
    return out ? out->loss : res.loss;
  };
  LossResult<double> res;
  eval(&res);
  std::vector<Eigen::MatrixXd*> ptrs;
  std::vector<Eigen::MatrixXd> grads;
  for (std::size_t i = 0; i < c1.size(); ++i) {
    ptrs.push_back(&c1.entries[i].value);
    grads.push_back(res.grads1[i]);
  }
  for (std::size_t i = 0; i < c2.size(); ++i) {
    ptrs.push_back(&c2.entries[i].value);
    grads.push_back(res.grads2[i]);
  }
  auto rep = setrl::test::fd_check(ptrs, [&] { return eval(nullptr); }, grads);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("actor loss gradients match finite differences", "[trainer]") {
  auto rng = make_rng(62);
  const EITConfig cfg = tiny_cfg();
  EITFamily<double> fam{cfg};
  ParamStore<double> actor, c1, c2;
  fam.build(actor, c1, c2, rng);
  TaskConfig task;
  auto ep = tiny_episode(task, clean_encoder(), 3, rng);

  auto eval = [&](LossResult<double>* out) {
    auto res = actor_loss(fam, std::span<const Transition>(ep.steps), actor, c1);
    if (out) *out = std::move(res);
    return out ? out->loss : res.loss;
  };
  LossResult<double> res;
  eval(&res);
  std::vector<Eigen::MatrixXd*> ptrs;
  std::vector<Eigen::MatrixXd> grads;
  for (std::size_t i = 0; i < actor.size(); ++i) {
    ptrs.push_back(&actor.entries[i].value);
    grads.push_back(res.grads1[i]);
  }
  auto rep = setrl::test::fd_check(ptrs, [&] { return eval(nullptr); }, grads);
  REQUIRE(rep.max_rel_err < 1e-4);
}

TEST_CASE("critic constant in the action gives exactly zero actor gradient", "[trainer]") {
  auto rng = make_rng(63);
  const EITConfig cfg = tiny_cfg();
  EITFamily<double> fam{cfg};
  ParamStore<double> actor, c1, c2;
  fam.build(actor, c1, c2, rng);
  c1[fam.critic_p.action_embed_w].setZero();  // sever the action path
  TaskConfig task;
  auto ep = tiny_episode(task, clean_encoder(), 3, rng);
  auto res = actor_loss(fam, std::span<const Transition>(ep.steps), actor, c1);
  for (const auto& g : res.grads1)
    if (g.size() != 0) REQUIRE(g.cwiseAbs().maxCoeff() == 0.0);
}

namespace {

// scalar-parameter family with Q = -|a - a*|^2: checks the improvement
// direction of the deterministic policy gradient
struct QuadFamily {
  Eigen::RowVector2d a_star{0.02, -0.03};

  struct Batch {
    int n = 0;
  };
  void build(ParamStore<double>& actor, ParamStore<double>& c1, ParamStore<double>& c2,
             Rng&) {
    actor.add("a", 1, 2);
    c1.add("unused", 1, 1);
    c2.add("unused", 1, 1);
  }
  Batch make_batch(const std::vector<const Observation*>& obs, bool) const {
    return {static_cast<int>(obs.size())};
  }
  ad::Var policy(ad::Tape<double>& t, const std::vector<ad::Var>& w, const Batch& b) const {
    return t.repeat_row(w[0], b.n);
  }
  ad::Var q(ad::Tape<double>& t, const std::vector<ad::Var>& w, const Batch& b,
            ad::Var action) const {
    ad::Mat<double> target = a_star.replicate(b.n, 1);
    ad::Var diff = t.sub(action, t.leaf(target));
    ad::Var sq = t.hadamard(diff, diff);
    ad::Mat<double> ones(2, 1);
    ones.setOnes();
    return t.scale(t.matmul(sq, t.leaf(ones)), -1.0);
  }
  Eigen::Vector2d policy_single(const ParamStore<double>& actor, const Observation&) const {
    return {actor[0](0, 0), actor[0](0, 1)};
  }
  double a_max() const { return 0.05; }
};

}  // namespace

TEST_CASE("policy gradient walks toward the quadratic optimum", "[trainer]") {
  auto rng = make_rng(64);
  QuadFamily fam;
  ParamStore<double> actor, c1, c2;
  fam.build(actor, c1, c2, rng);
  actor[0] << -0.04, 0.04;
  TaskConfig task;
  auto ep = tiny_episode(task, clean_encoder(), 2, rng);
  Adam<double> opt(1e-2);
  for (int it = 0; it < 200; ++it) {
    auto res = actor_loss(fam, std::span<const Transition>(ep.steps), actor, c1);
    opt.step(actor, res.grads1);
  }
  REQUIRE(std::abs(actor[0](0, 0) - 0.02) < 1e-3);
  REQUIRE(std::abs(actor[0](0, 1) + 0.03) < 1e-3);
}

TEST_CASE("polyak update interpolates stores", "[trainer]") {
  ParamStore<double> online, target;
  online.add("w", 2, 2);
  target.add("w", 2, 2);
  online[0].setOnes();
  target[0].setZero();

  ParamStore<double> t1 = target;
  polyak_update(t1, online, 1.0);
  REQUIRE(t1[0] == online[0]);

  ParamStore<double> t0 = target;
  polyak_update(t0, online, 0.0);
  REQUIRE(t0[0] == target[0]);

  ParamStore<double> t5 = target;
  polyak_update(t5, online, 0.05);
  REQUIRE(t5[0](0, 0) == Catch::Approx(0.05).margin(1e-15));

  ParamStore<double> bad;
  bad.add("w", 1, 2);
  REQUIRE_THROWS_AS(polyak_update(bad, online, 0.5), std::invalid_argument);
}

TEST_CASE("her relabeling recomputes rewards against future goals", "[trainer]") {
  auto rng = make_rng(65);
  TaskConfig task;
  task.n_objects = 2;
  EncoderConfig enc = clean_encoder();
  auto ep = tiny_episode(task, enc, 6, rng);
  RelabelContext ctx{&enc, make_gt_reward(task)};

  // ratio 0: bit-identical output
  auto same = her_relabel(ep, 0.0, ctx, rng);
  REQUIRE(same.size() == ep.steps.size());
  for (std::size_t i = 0; i < same.size(); ++i) {
    REQUIRE(same[i].reward == ep.steps[i].reward);
    REQUIRE(same[i].desired_goal.pos == ep.steps[i].desired_goal.pos);
    REQUIRE(multiset_equal(same[i].obs.goal_sets[0], ep.steps[i].obs.goal_sets[0]));
  }

  // relabeling with the transition's own achieved goal gives exactly zero
  auto own = relabel_with_goal(ep.steps[2], ep.steps[2].achieved_goal, ctx, rng);
  REQUIRE(own.reward == 0.0);

  // ratio 1: desired goal becomes a future achieved goal; state untouched
  auto all = her_relabel(ep, 1.0, ctx, rng);
  for (std::size_t i = 0; i < all.size(); ++i) {
    bool found = false;
    for (std::size_t u = i; u < ep.steps.size() && !found; ++u)
      found = all[i].desired_goal.pos == ep.steps[u].achieved_goal.pos;
    REQUIRE(found);
    // state fields bit-identical: no future info leaks through observations
    for (std::size_t k = 0; k < all[i].obs.state_sets.size(); ++k) {
      const auto& a = all[i].obs.state_sets[k].particles;
      const auto& b = ep.steps[i].obs.state_sets[k].particles;
      REQUIRE(a.size() == b.size());
      for (std::size_t j = 0; j < a.size(); ++j) REQUIRE(particle_equal(a[j], b[j]));
    }
    REQUIRE(all[i].action == ep.steps[i].action);
  }
}

TEST_CASE("exploration decays to half and passes through when disabled", "[trainer]") {
  REQUIRE(exploration_sigma(0.2, 0.0) == 0.2);
  REQUIRE(exploration_epsilon(0.3, 0.0) == 0.3);
  REQUIRE(exploration_sigma(0.2, 1.0) == Catch::Approx(0.1));
  REQUIRE(exploration_epsilon(0.3, 1.0) == Catch::Approx(0.15));

  auto rng = make_rng(66);
  const Eigen::Vector2d a(0.01, -0.02);
  REQUIRE(explore_action(a, 0.5, 0.0, 0.0, rng, 0.05) == a);

  // noisy actions stay in bounds
  for (int t = 0; t < 200; ++t) {
    const Eigen::Vector2d n = explore_action(a, 0.0, 0.2, 0.3, rng, 0.05);
    REQUIRE(std::abs(n.x()) <= 0.05);
    REQUIRE(std::abs(n.y()) <= 0.05);
  }
}

TEST_CASE("replay buffer enforces its capacity exactly", "[trainer]") {
  auto rng = make_rng(67);
  TaskConfig task;
  EncoderConfig enc = clean_encoder();
  ReplayBuffer buf(25);
  for (int i = 0; i < 10; ++i) {
    buf.push(tiny_episode(task, enc, 7, rng));
    REQUIRE(buf.size() <= 25);
  }
  REQUIRE(buf.size() == 21);  // 3 episodes of 7
  REQUIRE(buf.episode_count() == 3);
  for (int i = 0; i < 100; ++i) {
    auto [e, t] = buf.sample_index(rng);
    REQUIRE(e < buf.episode_count());
    REQUIRE(t < 7);
  }
}

TEST_CASE("micro training run: smoke, target gating and determinism", "[trainer]") {
  EITConfig cfg = tiny_cfg();
  TaskConfig task;
  task.n_objects = 1;
  task.horizon = 10;
  TrainConfig tc;
  tc.batch = 8;
  tc.episodes_per_loop = 4;
  tc.total_env_steps = 240;
  tc.eval_every = 120;
  tc.eval_goals = 4;
  tc.buffer_capacity = 1000;
  tc.update_to_data = 0.25;
  tc.checkpoint_every = 1000000;

  auto make_trainer = [&](int policy_delay) {
    TrainConfig t2 = tc;
    t2.policy_delay = policy_delay;
    return Trainer<double, EITFamily<double>>(EITFamily<double>{cfg}, task, clean_encoder(), t2,
                                              make_gt_reward(task), 1234);
  };

  // with a huge policy delay the targets never move
  auto frozen = make_trainer(1 << 20);
  const ParamStore<double> targets_before = frozen.critic1_t;
  auto stats = frozen.run(1234);
  REQUIRE(stats.env_steps == 240);
  REQUIRE(!stats.metrics.empty());
  for (std::size_t i = 0; i < targets_before.size(); ++i)
    REQUIRE(targets_before.entries[i].value == frozen.critic1_t.entries[i].value);

  // with delay 2 they change only through polyak (and online critics move)
  auto live = make_trainer(2);
  auto live2 = make_trainer(2);
  auto s1 = live.run(777);
  auto s2 = live2.run(777);
  bool target_moved = false;
  for (std::size_t i = 0; i < live.critic1_t.size(); ++i)
    target_moved = target_moved ||
                   live.critic1_t.entries[i].value != targets_before.entries[i].value;
  REQUIRE(target_moved);

  // determinism: same seed, bit-identical metrics and parameters
  REQUIRE(s1.metrics.size() == s2.metrics.size());
  for (std::size_t i = 0; i < s1.metrics.size(); ++i) {
    REQUIRE(s1.metrics[i].success_rate == s2.metrics[i].success_rate);
    REQUIRE(s1.metrics[i].avg_return == s2.metrics[i].avg_return);
    REQUIRE(s1.metrics[i].critic_loss == s2.metrics[i].critic_loss);
  }
  for (std::size_t i = 0; i < live.actor.size(); ++i)
    REQUIRE(live.actor.entries[i].value == live2.actor.entries[i].value);
}

TEST_CASE("zero reward with HER off drives the critic toward zero", "[trainer]") {
  EITConfig cfg = tiny_cfg();
  TaskConfig task;
  task.n_objects = 1;
  task.horizon = 10;
  TrainConfig tc;
  tc.batch = 16;
  tc.episodes_per_loop = 4;
  tc.total_env_steps = 600;
  tc.eval_every = 600;
  tc.eval_goals = 2;
  tc.her_ratio = 0.0;
  tc.update_to_data = 1.0;
  TransitionReward zero = [](const Transition&) { return 0.0; };
  Trainer<double, EITFamily<double>> tr(EITFamily<double>{cfg}, task, clean_encoder(), tc, zero,
                                        42);
  auto stats = tr.run(42);
  REQUIRE(stats.metrics.back().critic_loss < 1e-3);
}
