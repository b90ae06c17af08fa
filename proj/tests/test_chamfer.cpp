#include <catch2/catch_amalgamated.hpp>

#include "setrl/chamfer.hpp"
#include "setrl/env.hpp"

using namespace setrl;

namespace {

Particle at(double x, double y) {
  Particle p;
  p.pos = {x, y};
  p.scale = {0.08, 0.08};
  p.feature = Eigen::VectorXd::Zero(4);
  return p;
}

Particle random_particle(Rng& rng) {
  Particle p = at(uniform(rng, 0, 1), uniform(rng, 0, 1));
  p.feature = Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) { return uniform(rng, 0, 2); });
  p.depth = uniform(rng, 0, 1);
  return p;
}

// Literal transcription of the generalized density-aware distance: builds
// the partition sets explicitly and applies the formula term by term.
double naive_gdac(const std::vector<Particle>& X, const std::vector<Particle>& Y,
                  const DistancePair& d, double eps) {
  auto canonical_rank = [](const std::vector<Particle>& set) {
    std::vector<int> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return particle_less(set[a], set[b]); });
    std::vector<int> rank(set.size());
    for (std::size_t r = 0; r < idx.size(); ++r) rank[idx[r]] = int(r);
    return rank;
  };
  auto one_side = [&](const std::vector<Particle>& A, const std::vector<Particle>& B) {
    auto rank = canonical_rank(B);
    std::vector<std::vector<int>> partitions(B.size());
    for (std::size_t i = 0; i < A.size(); ++i) {
      int best = -1;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < B.size(); ++j) {
        double dist = entity_distance(d.match, A[i], B[j]);
        if (dist < bd || (dist == bd && rank[j] < rank[best])) {
          bd = dist;
          best = int(j);
        }
      }
      partitions[best].push_back(int(i));
    }
    double nonempty = 0;
    for (const auto& part : partitions) nonempty += part.empty() ? 0 : 1;
    double total = 0;
    for (std::size_t j = 0; j < B.size(); ++j) {
      double inner = 0;
      for (int i : partitions[j]) inner += entity_distance(d.measure, A[i], B[j]);
      total += inner / (double(partitions[j].size()) + eps);
    }
    return total / nonempty;
  };
  return one_side(X, Y) + one_side(Y, X);
}

}  // namespace

TEST_CASE("gdac of identical multisets is zero", "[chamfer]") {
  auto rng = make_rng(1);
  std::vector<Particle> x;
  for (int i = 0; i < 5; ++i) x.push_back(random_particle(rng));
  auto y = x;
  std::reverse(y.begin(), y.end());
  DistancePair d{EntityDistance::l1_pos, EntityDistance::l2_pos};
  REQUIRE(gdac(x, y, d) == 0.0);
}

TEST_CASE("gdac singleton hand value", "[chamfer]") {
  std::vector<Particle> x = {at(0, 0)}, y = {at(0.3, 0.4)};
  DistancePair d{EntityDistance::l1_pos, EntityDistance::l1_pos};
  REQUIRE(gdac(x, y, d, 1e-12) == Catch::Approx(1.4).margin(1e-9));
}

TEST_CASE("gdac density weighting hand value", "[chamfer]") {
  // X = {(0,0),(1,0)}, Y = {(0,0)}: term1 = (0+1)/2, term2 = 0
  std::vector<Particle> x = {at(0, 0), at(1, 0)}, y = {at(0, 0)};
  DistancePair d{EntityDistance::l1_pos, EntityDistance::l2_pos};
  REQUIRE(gdac(x, y, d, 1e-12) == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("gdac empty set errors", "[chamfer]") {
  std::vector<Particle> x = {at(0, 0)}, empty;
  DistancePair d;
  REQUIRE_THROWS_AS(gdac(x, empty, d), std::invalid_argument);
  REQUIRE_THROWS_AS(gdac(empty, x, d), std::invalid_argument);
}

TEST_CASE("gdac agrees with the naive transcription", "[chamfer]") {
  auto rng = make_rng(2);
  DistancePair d{EntityDistance::l1_pos, EntityDistance::l2_feat};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Particle> x, y;
    const int nx = uniform_int(rng, 1, 8), ny = uniform_int(rng, 1, 8);
    for (int i = 0; i < nx; ++i) x.push_back(random_particle(rng));
    for (int i = 0; i < ny; ++i) y.push_back(random_particle(rng));
    const double a = gdac(x, y, d, 1e-8);
    const double b = naive_gdac(x, y, d, 1e-8);
    REQUIRE(a == Catch::Approx(b).margin(1e-9));
  }
}

TEST_CASE("gdac is symmetric and non-negative", "[chamfer]") {
  auto rng = make_rng(3);
  DistancePair d{EntityDistance::l2_pos, EntityDistance::l2_pos};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Particle> x, y;
    for (int i = 0; i < uniform_int(rng, 1, 6); ++i) x.push_back(random_particle(rng));
    for (int i = 0; i < uniform_int(rng, 1, 6); ++i) y.push_back(random_particle(rng));
    const double xy = gdac(x, y, d);
    REQUIRE(xy >= 0.0);
    REQUIRE(xy == Catch::Approx(gdac(y, x, d)).margin(1e-12));
  }
}

TEST_CASE("argmin ties break on the canonical order, not input order", "[chamfer]") {
  // x is equidistant (D2 = position) from y1 and y2; y2 sorts first.
  Particle x = at(0, 0);
  Particle y1 = at(1, 0), y2 = at(-1, 0);
  y1.feature << 1, 0, 0, 0;
  y2.feature << 0.25, 0, 0, 0;
  DistancePair d{EntityDistance::l2_feat, EntityDistance::l2_pos};
  const double a = gdac({x}, {y1, y2}, d, 1e-12);
  const double b = gdac({x}, {y2, y1}, d, 1e-12);
  REQUIRE(a == b);
  // x-side term matched y2 (canonically first): D1 = 0.25. y-side: y1 and y2
  // both match x: sum(1 + 0.25)/(2+eps). total = 0.25 + 0.625
  REQUIRE(a == Catch::Approx(0.875).margin(1e-9));
}

TEST_CASE("standard chamfer hand value and reduction", "[chamfer]") {
  std::vector<Particle> x = {at(0, 0)}, y = {at(0.3, 0.4)};
  REQUIRE(standard_chamfer(x, y) == Catch::Approx(0.5).margin(1e-12));

  auto rng = make_rng(4);
  DistancePair dd{EntityDistance::sq_l2_full, EntityDistance::sq_l2_full};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Particle> a, b;
    for (int i = 0; i < uniform_int(rng, 1, 6); ++i) a.push_back(random_particle(rng));
    for (int i = 0; i < uniform_int(rng, 1, 6); ++i) b.push_back(random_particle(rng));
    REQUIRE(standard_chamfer(a, b) ==
            Catch::Approx(gdac_uniform_weights(a, b, dd)).margin(1e-9));
  }
}

TEST_CASE("chamfer-kl closed form and permutation invariance", "[chamfer]") {
  DiagGaussian g1{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  DiagGaussian g2{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)};
  REQUIRE(chamfer_kl({g1}, {g1}) == 0.0);
  REQUIRE(chamfer_kl({g1}, {g2}) == Catch::Approx(1.0).margin(1e-12));

  auto rng = make_rng(5);
  std::vector<DiagGaussian> s1, s2;
  for (int i = 0; i < 4; ++i) {
    s1.push_back({Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) { return uniform(rng, -1, 1); }),
                  Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) { return uniform(rng, 0.1, 2); })});
    s2.push_back({Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) { return uniform(rng, -1, 1); }),
                  Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) { return uniform(rng, 0.1, 2); })});
  }
  const double base = chamfer_kl(s1, s2);
  std::reverse(s1.begin(), s1.end());
  std::swap(s2[0], s2[3]);
  REQUIRE(chamfer_kl(s1, s2) == Catch::Approx(base).margin(1e-12));

  DiagGaussian bad{Eigen::VectorXd::Zero(1), -Eigen::VectorXd::Ones(1)};
  REQUIRE_THROWS_AS(chamfer_kl({g1}, {bad}), std::invalid_argument);
}

namespace {

RewardConfig object_reward_config(int n_colors) {
  RewardConfig cfg;
  for (int c = 0; c < n_colors; ++c) cfg.interest_codes.push_back(object_code(c, 4));
  return cfg;
}

}  // namespace

TEST_CASE("chamfer reward is zero when state matches goal", "[chamfer]") {
  TaskConfig task;
  task.n_objects = 2;
  auto rng = make_rng(6);
  auto [s, g] = reset(task, rng);
  g.pos = s.object_pos;  // goal equals current layout
  EncoderConfig enc;
  enc.views = default_views(2, 0.0);
  enc.decoys_per_view = 2;
  Observation obs = observe(s, g, enc, rng);
  auto cfg = object_reward_config(2);
  REQUIRE(chamfer_reward(obs, cfg) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("occluding a matched object adds the bonus exactly once", "[chamfer]") {
  TaskConfig task;
  task.n_objects = 2;
  auto rng = make_rng(7);
  auto [s, g] = reset(task, rng);
  EncoderConfig enc;
  enc.views = default_views(2, 0.0);
  enc.decoys_per_view = 0;
  EncoderConfig occluding = enc;
  occluding.views[0].entity_dropout = {0.0, 0.0, 1.0};  // occlude object #2 in view 0

  Observation obs;  // state-side occlusion only; the goal image stays clean
  obs.state_sets = encode_state(s, occluding, rng);
  obs.goal_sets = encode_goal(g, enc, rng);

  Observation obs_clear;
  obs_clear.state_sets = encode_state(s, enc, rng);
  obs_clear.goal_sets = encode_goal(g, enc, rng);

  auto cfg = object_reward_config(2);
  const double with_occlusion = chamfer_reward(obs, cfg);
  const double without = chamfer_reward(obs_clear, cfg);

  // the occluded object's goal particle in view 0 has no feature match
  RewardConfig no_bonus = cfg;
  no_bonus.no_match_bonus = 0.0;
  const double base = chamfer_reward(obs, no_bonus);
  REQUIRE(with_occlusion == Catch::Approx(base + cfg.no_match_bonus).margin(1e-12));
  REQUIRE(with_occlusion < without);
}

TEST_CASE("chamfer reward ignores particle order", "[chamfer]") {
  TaskConfig task;
  task.n_objects = 3;
  auto rng = make_rng(8);
  auto [s, g] = reset(task, rng);
  EncoderConfig enc;
  enc.views = default_views(2, 0.0);
  Observation obs = observe(s, g, enc, rng);
  auto cfg = object_reward_config(3);
  const double base = chamfer_reward(obs, cfg);
  for (auto& set : obs.state_sets) std::reverse(set.particles.begin(), set.particles.end());
  for (auto& set : obs.goal_sets) std::next_permutation(set.particles.begin(), set.particles.end(),
                                                        particle_less);
  REQUIRE(chamfer_reward(obs, cfg) == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("all views empty after filtering errors", "[chamfer]") {
  Observation obs;
  obs.state_sets.resize(1);
  obs.goal_sets.resize(1);
  auto cfg = object_reward_config(1);
  REQUIRE_THROWS_AS(chamfer_reward(obs, cfg), std::runtime_error);
}

TEST_CASE("chamfer reward rises monotonically along a straight path", "[chamfer]") {
  TaskConfig task;
  task.n_objects = 1;
  EncoderConfig enc;
  enc.views = default_views(2, 0.0);
  enc.decoys_per_view = 0;
  auto cfg = object_reward_config(1);
  const Eigen::Vector2d start(0.2, 0.3), goal_pos(0.8, 0.7);
  GoalConfig g;
  g.pos = {goal_pos};
  g.code = {0};
  double prev = -std::numeric_limits<double>::infinity();
  auto rng = make_rng(9);
  for (int t = 0; t <= 20; ++t) {
    SimState s;
    s.agent_pos = {0.05, 0.05};
    s.object_pos = {start + (goal_pos - start) * (t / 20.0)};
    s.object_code = {0};
    const double r = chamfer_reward(observe(s, g, enc, rng), cfg);
    REQUIRE(r >= prev - 1e-12);
    prev = r;
  }
  REQUIRE(prev == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("smorl reward on exact and offset matches", "[chamfer]") {
  Particle state_obj = at(0.5, 0.5);
  state_obj.feature = object_code(0, 4);
  Particle agent = at(0.1, 0.1);
  agent.feature = agent_code(4);
  Observation obs;
  obs.state_sets.push_back({{agent, state_obj}, 0});

  Particle goal = at(0.5, 0.5);
  goal.feature = object_code(0, 4);
  REQUIRE(smorl_reward(obs, {goal}) == 0.0);

  Particle goal_off = at(0.8, 0.9);
  goal_off.feature = object_code(0, 4);
  REQUIRE(smorl_reward(obs, {goal_off}) == Catch::Approx(-0.5).margin(1e-12));

  // no feature match within C -> minimal reward
  Particle goal_alien = at(0.5, 0.5);
  goal_alien.feature = object_code(5, 4);
  REQUIRE(smorl_reward(obs, {goal_alien}, 0.5, -1.0) == -1.0);

  Observation empty;
  empty.state_sets.push_back({{}, 0});
  REQUIRE_THROWS_AS(smorl_reward(empty, {goal}), std::runtime_error);
}
