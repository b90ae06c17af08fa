#include <catch2/catch_amalgamated.hpp>

#include "setrl/theory.hpp"

using namespace setrl;
using namespace setrl::theory;
using Eigen::VectorXd;

namespace {

VectorXd vec1(double x) {
  VectorXd v(1);
  v << x;
  return v;
}

// uniform-kernel spec whose value function reads the state's first entry
SyntheticQSpec table_spec(double gamma = 0.9) {
  SyntheticQSpec spec;
  spec.state_dim = 1;
  spec.action_dim = 1;
  spec.gamma = gamma;
  spec.alpha = [](const VectorXd&, const VectorXd&, const VectorXd&) { return 1.0; };
  spec.value = [](const VectorXd& s, const VectorXd&) { return s(0); };
  return spec;
}

}  // namespace

TEST_CASE("q_star on a single entity returns its value", "[theory]") {
  auto rng = make_rng(40);
  auto spec = random_spec(rng, 0.98);
  for (int t = 0; t < 20; ++t) {
    auto s = sample_states(spec, 1, rng);
    auto a = sample_action(spec, rng);
    REQUIRE(q_star_eval(spec, s, a) == Catch::Approx(spec.value(s[0], a)).margin(1e-15));
  }
}

TEST_CASE("uniform kernel averages the values", "[theory]") {
  auto spec = table_spec();
  std::vector<VectorXd> s = {vec1(0.1), vec1(0.2), vec1(0.3)};
  REQUIRE(q_star_eval(spec, s, vec1(0)) == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("q_star and counterexample are permutation invariant", "[theory]") {
  auto rng = make_rng(41);
  auto spec = random_spec(rng, 0.9);
  for (int t = 0; t < 20; ++t) {
    auto s = sample_states(spec, uniform_int(rng, 2, 5), rng);
    auto a = sample_action(spec, rng);
    auto sp = s;
    std::shuffle(sp.begin(), sp.end(), rng);
    REQUIRE(q_star_eval(spec, s, a) == Catch::Approx(q_star_eval(spec, sp, a)).margin(1e-13));
    REQUIRE(counterexample_eval(spec, s, a) ==
            Catch::Approx(counterexample_eval(spec, sp, a)).margin(1e-13));
  }
}

TEST_CASE("q_star stays within the discounted value range", "[theory]") {
  auto rng = make_rng(42);
  for (double gamma : {0.9, 0.98}) {
    auto spec = random_spec(rng, gamma);
    for (int t = 0; t < 100; ++t) {
      auto s = sample_states(spec, uniform_int(rng, 1, 7), rng);
      const double q = q_star_eval(spec, s, sample_action(spec, rng));
      REQUIRE(q >= 0.0);
      REQUIRE(q <= 1.0 / (1.0 - gamma) + 1e-12);
    }
  }
}

TEST_CASE("theorem bounds evaluate their closed forms", "[theory]") {
  REQUIRE(theorem1_bound(0.1, 0.0, 3, 2, 0.98) == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(theorem1_bound(0.0, 0.0, 4, 3, 0.9) == 0.0);
  REQUIRE(theorem1_bound(0.01, 0.001, 3, 2, 0.98) == Catch::Approx(0.88).margin(1e-12));

  REQUIRE(theorem3_bound(0.0, 0.5, 3, 2, 0.9) == 0.0);
  // (12*5/(0.5*0.1) + 8/(0.5*0.1) + 3) * 0.01 = (1200 + 160 + 3) * 0.01
  REQUIRE(theorem3_bound(0.01, 0.5, 3, 2, 0.9) == Catch::Approx(13.63).margin(1e-12));
  REQUIRE(theorem3_bound(0.01, 0.5, 3, 2, 0.9) < theorem3_bound(0.01, 0.5, 3, 3, 0.9));
  REQUIRE_THROWS_AS(theorem3_bound(0.01, 0.0, 3, 2, 0.9), std::invalid_argument);
}

TEST_CASE("zero perturbation reproduces q_star exactly", "[theory]") {
  auto rng = make_rng(43);
  auto spec = random_spec(rng, 0.9);
  PerturbationSpec pert;
  pert.epsilon = 0.0;
  pert.delta = 0.0;
  pert.train_objects = 3;
  pert.extrapolation = 2;
  auto qhat = q_hat_build(spec, pert, rng, 200);
  for (int t = 0; t < 50; ++t) {
    auto s = sample_states(spec, uniform_int(rng, 1, 5), rng);
    auto a = sample_action(spec, rng);
    REQUIRE(std::abs(q_eval(qhat.alpha, qhat.value, s, a) - q_star_eval(spec, s, a)) < 1e-12);
  }
}

TEST_CASE("value-only perturbation stays within epsilon", "[theory]") {
  auto rng = make_rng(44);
  auto spec = random_spec(rng, 0.98);
  PerturbationSpec pert;
  pert.epsilon = 0.05;
  pert.delta = 0.0;
  pert.train_objects = 4;
  pert.extrapolation = 3;
  auto qhat = q_hat_build(spec, pert, rng, 500);
  REQUIRE(qhat.certificate.measured_value_gap <= 0.05 + 1e-12);
  for (int t = 0; t < 200; ++t) {
    auto s = sample_states(spec, uniform_int(rng, 1, 4), rng);
    auto a = sample_action(spec, rng);
    REQUIRE(std::abs(q_eval(qhat.alpha, qhat.value, s, a) - q_star_eval(spec, s, a)) <=
            0.05 + 1e-12);
  }
  REQUIRE(qhat.certificate.samples == 500);
  REQUIRE(qhat.certificate.measured_weight_gap == 0.0);
}

TEST_CASE("theorem 1 certification finds no violations", "[theory]") {
  auto rng = make_rng(45);
  for (double gamma : {0.9, 0.98}) {
    auto spec = random_spec(rng, gamma);
    PerturbationSpec pert;
    pert.epsilon = 0.02;
    pert.delta = 0.002;
    pert.train_objects = 4;
    pert.extrapolation = 3;
    auto rep = certify_theorem1(spec, pert, 100, rng, 300);
    REQUIRE(rep.violations == 0);
    REQUIRE(rep.rows.size() == 3);
    for (const auto& row : rep.rows) REQUIRE(row.max_measured <= row.bound);
  }
}

TEST_CASE("delta-zero certification stays under 3 epsilon", "[theory]") {
  auto rng = make_rng(46);
  auto spec = random_spec(rng, 0.9);
  PerturbationSpec pert;
  pert.epsilon = 0.03;
  pert.delta = 0.0;
  pert.train_objects = 3;
  pert.extrapolation = 2;
  auto rep = certify_theorem1(spec, pert, 200, rng, 300);
  REQUIRE(rep.violations == 0);
  for (const auto& row : rep.rows) REQUIRE(row.max_measured <= 3.0 * pert.epsilon);
}

TEST_CASE("theorem 3 certification on separated states", "[theory]") {
  auto rng = make_rng(47);
  auto spec = random_separable_spec(rng, 0.9, 0.4, 5, 0.1);
  PerturbationSpec pert;
  pert.epsilon = 0.01;
  pert.delta = 0.001;
  pert.train_objects = 3;
  pert.extrapolation = 2;
  auto rep = certify_theorem3(spec, pert, /*lambda=*/0.4, /*separation=*/0.1, 50, rng, 200);
  REQUIRE(rep.violations == 0);
  REQUIRE(rep.lambda == 0.4);
}

TEST_CASE("fault injection produces violations", "[theory]") {
  auto rng = make_rng(48);
  auto spec = random_spec(rng, 0.98);
  PerturbationSpec pert;
  pert.epsilon = 0.001;
  pert.delta = 1e-4;
  pert.train_objects = 3;
  pert.extrapolation = 2;
  auto rep = certify_theorem1(spec, pert, 200, rng, 100, /*fault_scale=*/500.0);
  REQUIRE(rep.violations > 0);
}

TEST_CASE("separated state sampling honours both gaps", "[theory]") {
  auto rng = make_rng(49);
  auto spec = random_spec(rng, 0.9);
  auto a = sample_action(spec, rng);
  auto states = sample_separated_states(spec, 5, a, 0.3, 0.2, rng);
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      REQUIRE((states[i] - states[j]).lpNorm<1>() >= 0.2);
      REQUIRE(std::abs(spec.value(states[i], a) - spec.value(states[j], a)) >= 0.3);
    }
  REQUIRE_THROWS_AS(sample_separated_states(spec, 30, a, 5.0, 0.2, rng, 500),
                    std::runtime_error);
}

TEST_CASE("deepsets aggregation preserves the pointwise gap", "[theory]") {
  auto rng = make_rng(50);
  auto spec = random_spec(rng, 0.9);
  auto same = deepsets_check(spec.value, spec.value, 0.01, 6, 200, spec, rng);
  REQUIRE(same.max_measured == 0.0);
  REQUIRE(same.violations == 0);

  const double eps = 0.02;
  ValueFn shifted = [&spec, eps](const VectorXd& s, const VectorXd& a) {
    return spec.value(s, a) + eps / 2.0;
  };
  auto rep = deepsets_check(spec.value, shifted, eps, 6, 200, spec, rng);
  REQUIRE(rep.violations == 0);
  REQUIRE(rep.max_measured == Catch::Approx(eps / 2.0).margin(1e-12));

  // randomized specs, bounded-noise approximators
  long violations = 0;
  for (int t = 0; t < 100; ++t) {
    auto d = random_spec(rng, 0.9);
    auto noise = random_map(rng, d.state_dim + d.action_dim, -1.0, 1.0);
    ValueFn vh = [d, noise, eps](const VectorXd& s, const VectorXd& a) {
      VectorXd x(s.size() + a.size());
      x << s, a;
      return d.value(s, a) + eps * noise(x);
    };
    violations += deepsets_check(d.value, vh, eps, 6, 20, d, rng).violations;
  }
  REQUIRE(violations == 0);
}

TEST_CASE("counterexample matches q_star up to two entities", "[theory]") {
  auto rng = make_rng(51);
  auto spec = random_spec(rng, 0.9);
  for (int t = 0; t < 50; ++t) {
    auto s = sample_states(spec, uniform_int(rng, 1, 2), rng);
    auto a = sample_action(spec, rng);
    REQUIRE(std::abs(counterexample_eval(spec, s, a) - q_star_eval(spec, s, a)) < 1e-12);
  }
}

TEST_CASE("counterexample error on the three-value instance is 0.1", "[theory]") {
  auto spec = table_spec();
  std::vector<VectorXd> s = {vec1(0.1), vec1(0.2), vec1(0.3)};
  const double qh = counterexample_eval(spec, s, vec1(0));
  const double qs = q_star_eval(spec, s, vec1(0));
  REQUIRE(qh == Catch::Approx(0.1).margin(1e-12));
  REQUIRE(std::abs(qh - qs) == Catch::Approx(0.1).margin(1e-12));
}

TEST_CASE("counterexample error equals the normalized value tail", "[theory]") {
  auto rng = make_rng(52);
  auto spec = table_spec();
  for (int t = 0; t < 100; ++t) {
    const int n = uniform_int(rng, 3, 6);
    std::vector<VectorXd> s;
    std::vector<double> vals;
    for (int i = 0; i < n; ++i) {
      s.push_back(vec1(uniform(rng, 0.01, 1.0)));
      vals.push_back(s.back()(0));
    }
    std::sort(vals.begin(), vals.end());
    double tail = 0.0;
    for (int j = 2; j < n; ++j) tail += vals[j];
    const double err =
        std::abs(counterexample_eval(spec, s, vec1(0)) - q_star_eval(spec, s, vec1(0)));
    REQUIRE(err == Catch::Approx(tail / n).margin(1e-12));
    REQUIRE(err > 0.0);
  }
}

TEST_CASE("lemma suite reports no violations", "[theory]") {
  auto rng = make_rng(53);
  auto reports = lemma_suite(1000, rng);
  REQUIRE(reports.size() == 4);
  for (const auto& rep : reports) {
    CAPTURE(rep.lemma);
    REQUIRE(rep.violations == 0);
    REQUIRE(rep.trials == 1000);
  }
}
