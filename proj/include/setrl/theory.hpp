#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "setrl/rng.hpp"

// Numerical certification of compositional generalization for self-attention
// value functions: synthetic Q* instances with the assumed structure,
// bounded perturbations with certified premises, closed-form error bounds
// and randomized violation search. A violation falsifies this
// implementation, not the theory.

namespace setrl::theory {

using Eigen::VectorXd;

// Random smooth two-layer map with output squashed into [lo, hi].
struct BoundedMap {
  Eigen::MatrixXd w1;
  VectorXd b1;
  Eigen::RowVectorXd w2;
  double b2 = 0.0;
  double lo = -1.0, hi = 1.0;

  double operator()(const VectorXd& x) const {
    const double u = (w2 * (w1 * x + b1).array().tanh().matrix())(0) + b2;
    return lo + (hi - lo) * 0.5 * (1.0 + std::tanh(u));
  }
};

inline BoundedMap random_map(Rng& rng, int in_dim, double lo, double hi, int hidden = 8) {
  BoundedMap m;
  m.w1.resize(hidden, in_dim);
  m.b1.resize(hidden);
  m.w2.resize(hidden);
  for (int i = 0; i < hidden; ++i) {
    m.b1(i) = uniform(rng, -0.5, 0.5);
    m.w2(i) = uniform(rng, -1.0, 1.0);
    for (int j = 0; j < in_dim; ++j) m.w1(i, j) = uniform(rng, -1.5, 1.5);
  }
  m.b2 = uniform(rng, -0.5, 0.5);
  m.lo = lo;
  m.hi = hi;
  return m;
}

using KernelFn = std::function<double(const VectorXd&, const VectorXd&, const VectorXd&)>;
using ValueFn = std::function<double(const VectorXd&, const VectorXd&)>;

// An instance of the assumed Q-function class: a positive attention kernel
// and a per-entity value with range [0, 1/(1-gamma)].
struct SyntheticQSpec {
  int state_dim = 3;
  int action_dim = 2;
  double gamma = 0.98;
  KernelFn alpha;  // strictly positive
  ValueFn value;   // in [0, v_max]

  double v_max() const { return 1.0 / (1.0 - gamma); }
};

inline SyntheticQSpec random_spec(Rng& rng, double gamma, int state_dim = 3, int action_dim = 2,
                                  bool uniform_alpha = false) {
  if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
  SyntheticQSpec spec;
  spec.state_dim = state_dim;
  spec.action_dim = action_dim;
  spec.gamma = gamma;
  if (uniform_alpha) {
    spec.alpha = [](const VectorXd&, const VectorXd&, const VectorXd&) { return 1.0; };
  } else {
    // kernel exponent bounded in [-3, 3] keeps the weights well-conditioned
    auto phi = random_map(rng, 2 * state_dim + action_dim, -3.0, 3.0);
    spec.alpha = [phi](const VectorXd& si, const VectorXd& sj, const VectorXd& a) {
      VectorXd x(si.size() + sj.size() + a.size());
      x << si, sj, a;
      return std::exp(phi(x));
    };
  }
  auto psi = random_map(rng, state_dim + action_dim, 0.0, 1.0 / (1.0 - gamma));
  spec.value = [psi](const VectorXd& s, const VectorXd& a) {
    VectorXd x(s.size() + a.size());
    x << s, a;
    return psi(x);
  };
  return spec;
}

// Mean over entities of normalized attention-weighted value sums.
inline double q_eval(const KernelFn& alpha, const ValueFn& value,
                     const std::vector<VectorXd>& states, const VectorXd& a) {
  const std::size_t n = states.size();
  if (n == 0) throw std::invalid_argument("q_eval needs at least one entity");
  std::vector<double> vals(n);
  for (std::size_t j = 0; j < n; ++j) vals[j] = value(states[j], a);
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double wsum = 0.0, acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = alpha(states[i], states[j], a);
      wsum += w;
      acc += w * vals[j];
    }
    q += acc / wsum;
  }
  return q / static_cast<double>(n);
}

inline double q_star_eval(const SyntheticQSpec& spec, const std::vector<VectorXd>& states,
                          const VectorXd& a) {
  return q_eval(spec.alpha, spec.value, states, a);
}

// Truncated structure that matches Q* up to two entities but sums only the
// two lowest-value entities for larger sets, normalized by the full kernel
// sum; the canonical non-generalizing example.
inline double counterexample_eval(const KernelFn& alpha, const ValueFn& value,
                                  const std::vector<VectorXd>& states, const VectorXd& a) {
  const std::size_t n = states.size();
  if (n == 0) throw std::invalid_argument("counterexample_eval needs at least one entity");
  std::vector<double> vals(n);
  for (std::size_t j = 0; j < n; ++j) vals[j] = value(states[j], a);
  // order by value, ties broken on the state vector so the evaluator stays
  // permutation invariant
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (vals[x] != vals[y]) return vals[x] < vals[y];
    return std::lexicographical_compare(states[x].data(), states[x].data() + states[x].size(),
                                        states[y].data(), states[y].data() + states[y].size());
  });
  const std::size_t keep = std::min<std::size_t>(2, n);
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double wsum = 0.0, acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) wsum += alpha(states[i], states[j], a);
    for (std::size_t r = 0; r < keep; ++r) {
      const std::size_t j = order[r];
      acc += alpha(states[i], states[j], a) * vals[j];
    }
    q += acc / wsum;
  }
  return q / static_cast<double>(n);
}

inline double counterexample_eval(const SyntheticQSpec& spec, const std::vector<VectorXd>& states,
                                  const VectorXd& a) {
  return counterexample_eval(spec.alpha, spec.value, states, a);
}

// ---- closed-form bounds ----

inline double theorem1_bound(double epsilon, double delta, int M, int k, double gamma) {
  if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
  return 3.0 * epsilon + (3.0 * (M + k) + 2.0) / (1.0 - gamma) * delta;
}

inline double theorem3_bound(double epsilon, double lambda, int M, int k, double gamma) {
  if (lambda <= 0.0) throw std::invalid_argument("lambda must be > 0");
  if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must be in (0,1)");
  return (12.0 * (M + k) / (lambda * (1.0 - gamma)) + 8.0 / (lambda * (1.0 - gamma)) + 3.0) *
         epsilon;
}

// ---- perturbed approximator with certified premises ----

struct PerturbationSpec {
  double epsilon = 0.01;  // bound on |v_hat - v*|
  double delta = 0.001;   // bound on normalized attention weight deviation
  int train_objects = 3;  // M
  int extrapolation = 2;  // max k, in [1, M-1]

  void validate() const {
    if (epsilon < 0.0 || delta < 0.0) throw std::invalid_argument("epsilon/delta must be >= 0");
    if (train_objects < 2 || extrapolation < 1 || extrapolation > train_objects - 1)
      throw std::invalid_argument("need M >= 2 and 1 <= k <= M-1");
  }
};

struct PremiseCertificate {
  double epsilon_requested = 0.0;
  double delta_requested = 0.0;
  double measured_value_gap = 0.0;   // max |v_hat - v*| over samples
  double measured_q_gap = 0.0;       // max |Q_hat - Q*| over samples, N <= M
  double measured_weight_gap = 0.0;  // max normalized weight deviation, N <= M
  long samples = 0;
  int attempts = 1;
};

struct PerturbedQ {
  KernelFn alpha;
  ValueFn value;
  PremiseCertificate certificate;
};

inline std::vector<VectorXd> sample_states(const SyntheticQSpec& spec, int n, Rng& rng) {
  std::vector<VectorXd> s(static_cast<std::size_t>(n));
  for (auto& v : s)
    v = VectorXd::NullaryExpr(spec.state_dim, [&](Eigen::Index) { return uniform(rng, 0, 1); });
  return s;
}

inline VectorXd sample_action(const SyntheticQSpec& spec, Rng& rng) {
  return VectorXd::NullaryExpr(spec.action_dim, [&](Eigen::Index) { return uniform(rng, 0, 1); });
}

// States whose pairwise L1 distance is at least `separation` and whose
// values under v* differ pairwise by at least `lambda` for the given action.
inline std::vector<VectorXd> sample_separated_states(const SyntheticQSpec& spec, int n,
                                                     const VectorXd& a, double lambda,
                                                     double separation, Rng& rng,
                                                     int max_attempts = 20000) {
  std::vector<VectorXd> out;
  std::vector<double> vals;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < n; ++attempt) {
    VectorXd s =
        VectorXd::NullaryExpr(spec.state_dim, [&](Eigen::Index) { return uniform(rng, 0, 1); });
    const double v = spec.value(s, a);
    bool ok = true;
    for (std::size_t i = 0; i < out.size() && ok; ++i)
      ok = (s - out[i]).template lpNorm<1>() >= separation && std::abs(v - vals[i]) >= lambda;
    if (ok) {
      out.push_back(std::move(s));
      vals.push_back(v);
    }
  }
  if (static_cast<int>(out.size()) < n)
    throw std::runtime_error("could not sample lambda-separated states");
  return out;
}

// Random spec whose value function demonstrably admits `entities` states
// with pairwise value gaps >= lambda (needed by the Theorem 3 mode; some
// random value maps have too little spread and are rejected).
inline SyntheticQSpec random_separable_spec(Rng& rng, double gamma, double lambda, int entities,
                                            double separation, int state_dim = 3,
                                            int action_dim = 2) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto spec = random_spec(rng, gamma, state_dim, action_dim);
    try {
      const VectorXd a = sample_action(spec, rng);
      (void)sample_separated_states(spec, entities, a, lambda, separation, rng, 4000);
      return spec;
    } catch (const std::runtime_error&) {
    }
  }
  throw std::runtime_error("could not generate a lambda-separable spec");
}

// Builds v_hat = clamp(v* + bounded noise) and alpha_hat = alpha* * exp(c*rho)
// with c chosen so the normalized-weight deviation is below delta for every
// set size; premises are then verified on random tuples up to M objects.
// fault_scale > 1 deliberately widens the kernel perturbation beyond the
// claimed delta (a self-test knob for the certifier).
inline PerturbedQ q_hat_build(const SyntheticQSpec& spec, const PerturbationSpec& pert, Rng& rng,
                              long premise_samples = 10000, double fault_scale = 1.0,
                              int max_attempts = 4) {
  pert.validate();
  PerturbedQ out;
  auto noise_v = random_map(rng, spec.state_dim + spec.action_dim, -1.0, 1.0);
  auto noise_a = random_map(rng, 2 * spec.state_dim + spec.action_dim, -1.0, 1.0);
  const double vmax = spec.v_max();
  const double eps = pert.epsilon;

  double c = 0.5 * std::log1p(pert.delta) * fault_scale;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    const KernelFn alpha_star = spec.alpha;
    const ValueFn value_star = spec.value;
    out.value = [value_star, noise_v, eps, vmax](const VectorXd& s, const VectorXd& a) {
      VectorXd x(s.size() + a.size());
      x << s, a;
      return std::clamp(value_star(s, a) + eps * noise_v(x), 0.0, vmax);
    };
    out.alpha = [alpha_star, noise_a, c](const VectorXd& si, const VectorXd& sj,
                                         const VectorXd& a) {
      if (c == 0.0) return alpha_star(si, sj, a);
      VectorXd x(si.size() + sj.size() + a.size());
      x << si, sj, a;
      return alpha_star(si, sj, a) * std::exp(c * noise_a(x));
    };

    PremiseCertificate& cert = out.certificate;
    cert = PremiseCertificate{};
    cert.epsilon_requested = pert.epsilon;
    cert.delta_requested = pert.delta;
    cert.samples = premise_samples;
    cert.attempts = attempt;
    auto sub_rng = make_rng(derive_seed(rng(), 17));
    for (long trial = 0; trial < premise_samples; ++trial) {
      const int n = uniform_int(sub_rng, 1, pert.train_objects);
      const auto states = sample_states(spec, n, sub_rng);
      const VectorXd a = sample_action(spec, sub_rng);
      for (const auto& s : states) {
        cert.measured_value_gap =
            std::max(cert.measured_value_gap, std::abs(out.value(s, a) - spec.value(s, a)));
      }
      cert.measured_q_gap = std::max(
          cert.measured_q_gap, std::abs(q_eval(out.alpha, out.value, states, a) -
                                        q_star_eval(spec, states, a)));
      for (int i = 0; i < n; ++i) {
        double swh = 0.0, sws = 0.0;
        std::vector<double> wh(static_cast<std::size_t>(n)), ws(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
          wh[static_cast<std::size_t>(j)] = out.alpha(states[i], states[j], a);
          ws[static_cast<std::size_t>(j)] = spec.alpha(states[i], states[j], a);
          swh += wh[static_cast<std::size_t>(j)];
          sws += ws[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < n; ++j)
          cert.measured_weight_gap =
              std::max(cert.measured_weight_gap,
                       std::abs(wh[static_cast<std::size_t>(j)] / swh -
                                ws[static_cast<std::size_t>(j)] / sws));
      }
    }
    const bool ok = fault_scale != 1.0 ||
                    (cert.measured_value_gap <= pert.epsilon + 1e-12 &&
                     cert.measured_weight_gap <= pert.delta + 1e-12);
    if (ok) return out;
    c *= 0.5;  // rescale the kernel perturbation and re-verify
  }
  throw std::runtime_error("q_hat_build: premises unsatisfiable for requested (epsilon, delta)");
}

// ---- certification reports ----

struct CertRow {
  int k = 0;
  double bound = 0.0;
  double max_measured = 0.0;
  long trials = 0;
  long violations = 0;
};

struct CertReport {
  std::string theorem;
  int M = 0;
  double gamma = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;   // theorem1
  double lambda = 0.0;  // theorem3
  std::vector<CertRow> rows;
  long violations = 0;
  PremiseCertificate premise;
};

// Measures |Q_hat - Q*| on random (M+k)-object tuples for each k and checks
// the Theorem 1 bound with the requested premise constants.
inline CertReport certify_theorem1(const SyntheticQSpec& spec, const PerturbationSpec& pert,
                                   long trials_per_k, Rng& rng, long premise_samples = 2000,
                                   double fault_scale = 1.0) {
  PerturbedQ qhat = q_hat_build(spec, pert, rng, premise_samples, fault_scale);
  CertReport rep;
  rep.theorem = "theorem1";
  rep.M = pert.train_objects;
  rep.gamma = spec.gamma;
  rep.epsilon = pert.epsilon;
  rep.delta = pert.delta;
  rep.premise = qhat.certificate;
  for (int k = 1; k <= pert.extrapolation; ++k) {
    CertRow row;
    row.k = k;
    row.bound = theorem1_bound(pert.epsilon, pert.delta, pert.train_objects, k, spec.gamma);
    row.trials = trials_per_k;
    for (long t = 0; t < trials_per_k; ++t) {
      const auto states = sample_states(spec, pert.train_objects + k, rng);
      const VectorXd a = sample_action(spec, rng);
      const double err =
          std::abs(q_eval(qhat.alpha, qhat.value, states, a) - q_star_eval(spec, states, a));
      row.max_measured = std::max(row.max_measured, err);
      if (err > row.bound) ++row.violations;
    }
    rep.violations += row.violations;
    rep.rows.push_back(row);
  }
  return rep;
}

// Theorem 3 analogue on lambda-separated instances. The premise constant is
// the analytic bound max|Q_hat - Q*| <= epsilon + delta / (1 - gamma).
inline CertReport certify_theorem3(const SyntheticQSpec& spec, const PerturbationSpec& pert,
                                   double lambda, double state_separation, long trials_per_k,
                                   Rng& rng, long premise_samples = 2000,
                                   double fault_scale = 1.0) {
  PerturbedQ qhat = q_hat_build(spec, pert, rng, premise_samples, fault_scale);
  CertReport rep;
  rep.theorem = "theorem3";
  rep.M = pert.train_objects;
  rep.gamma = spec.gamma;
  rep.lambda = lambda;
  rep.delta = pert.delta;
  rep.epsilon = pert.epsilon + pert.delta / (1.0 - spec.gamma);
  rep.premise = qhat.certificate;
  for (int k = 1; k <= pert.extrapolation; ++k) {
    CertRow row;
    row.k = k;
    row.bound = theorem3_bound(rep.epsilon, lambda, pert.train_objects, k, spec.gamma);
    row.trials = trials_per_k;
    for (long t = 0; t < trials_per_k; ++t) {
      VectorXd a;
      std::vector<VectorXd> states;
      for (int retry = 0;; ++retry) {  // some actions admit no separated tuple
        a = sample_action(spec, rng);
        try {
          states = sample_separated_states(spec, pert.train_objects + k, a, lambda,
                                           state_separation, rng);
          break;
        } catch (const std::runtime_error&) {
          if (retry >= 20) throw;
        }
      }
      const double err =
          std::abs(q_eval(qhat.alpha, qhat.value, states, a) - q_star_eval(spec, states, a));
      row.max_measured = std::max(row.max_measured, err);
      if (err > row.bound) ++row.violations;
    }
    rep.violations += row.violations;
    rep.rows.push_back(row);
  }
  return rep;
}

struct DeepSetsReport {
  double epsilon = 0.0;
  int n_max = 0;
  long trials = 0;
  long violations = 0;
  double max_measured = 0.0;
  double singleton_gap = 0.0;  // pointwise |v_hat - v*| verified on singletons
};

// Mean-aggregation class: a pointwise epsilon gap stays an epsilon gap for
// every set size.
inline DeepSetsReport deepsets_check(const ValueFn& v_star, const ValueFn& v_hat, double epsilon,
                                     int n_max, long trials, const SyntheticQSpec& domain,
                                     Rng& rng) {
  DeepSetsReport rep;
  rep.epsilon = epsilon;
  rep.n_max = n_max;
  rep.trials = trials;
  for (long t = 0; t < trials; ++t) {
    const int n = uniform_int(rng, 1, n_max);
    const auto states = sample_states(domain, n, rng);
    const VectorXd a = sample_action(domain, rng);
    double mean_star = 0.0, mean_hat = 0.0;
    for (const auto& s : states) {
      const double vs = v_star(s, a), vh = v_hat(s, a);
      mean_star += vs;
      mean_hat += vh;
      rep.singleton_gap = std::max(rep.singleton_gap, std::abs(vh - vs));
    }
    const double err = std::abs(mean_hat - mean_star) / static_cast<double>(n);
    rep.max_measured = std::max(rep.max_measured, err);
    if (err > epsilon + 1e-12) ++rep.violations;
  }
  return rep;
}

struct LemmaReport {
  std::string lemma;
  long trials = 0;
  long violations = 0;
};

namespace detail {

inline double normalized(const std::vector<double>& w, std::size_t i,
                         const std::vector<std::size_t>& subset) {
  double sum = 0.0;
  for (auto j : subset) sum += w[j];
  return w[i] / sum;
}

inline double weighted_avg(const std::vector<double>& w, const std::vector<double>& v,
                           const std::vector<std::size_t>& subset) {
  double num = 0.0, den = 0.0;
  for (auto j : subset) {
    num += w[j] * v[j];
    den += w[j];
  }
  return num / den;
}

inline std::vector<std::vector<std::size_t>> subsets_up_to(std::size_t n, std::size_t max_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> sub;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) sub.push_back(i);
    if (sub.size() <= max_size) out.push_back(std::move(sub));
  }
  return out;
}

}  // namespace detail

// Randomized checks of the four supporting lemmas, each on instances that
// satisfy the premises by construction (premise constants are measured
// exhaustively where the lemma quantifies over sets).
inline std::vector<LemmaReport> lemma_suite(long trials, Rng& rng) {
  constexpr double slack = 1e-12;
  std::vector<LemmaReport> reports;

  {  // Lemma: |alpha v - beta u| < (alpha+beta)/2 eps + (v+u)/2 delta
    LemmaReport rep{"lemma1", trials, 0};
    for (long t = 0; t < trials; ++t) {
      const double delta = uniform(rng, 1e-6, 1.0), eps = uniform(rng, 1e-6, 1.0);
      const double al = uniform(rng, 0.0, 3.0);
      const double be = std::max(0.0, al + uniform(rng, -delta, delta) * 0.999);
      const double v = uniform(rng, 0.0, 3.0);
      const double u = std::max(0.0, v + uniform(rng, -eps, eps) * 0.999);
      const double bound = 0.5 * (al + be) * eps + 0.5 * (v + u) * delta;
      if (std::abs(al * v - be * u) > bound + slack) ++rep.violations;
    }
    reports.push_back(rep);
  }

  {  // Lemma: delta-close normalized weights stay 2*delta-close on M+k inputs
    LemmaReport rep{"lemma2", trials, 0};
    for (long t = 0; t < trials; ++t) {
      const int M = uniform_int(rng, 2, 4);
      const int k = uniform_int(rng, 1, M - 1);
      const std::size_t n = static_cast<std::size_t>(M + k);
      std::vector<double> f(n), g(n);
      for (std::size_t i = 0; i < n; ++i) {
        f[i] = std::exp(uniform(rng, -1.0, 1.0));
        g[i] = f[i] * std::exp(uniform(rng, -0.2, 0.2));
      }
      double delta = 0.0;
      for (const auto& sub : detail::subsets_up_to(n, static_cast<std::size_t>(M)))
        for (auto i : sub)
          delta = std::max(delta, std::abs(detail::normalized(f, i, sub) -
                                           detail::normalized(g, i, sub)));
      std::vector<std::size_t> full(n);
      std::iota(full.begin(), full.end(), 0);
      for (std::size_t i = 0; i < n; ++i)
        if (std::abs(detail::normalized(f, i, full) - detail::normalized(g, i, full)) >
            2.0 * delta + slack)
          ++rep.violations;
    }
    reports.push_back(rep);
  }

  {  // Lemma: |F - F*| <= eps + N C delta for normalized weighted sums
    LemmaReport rep{"lemma3", trials, 0};
    for (long t = 0; t < trials; ++t) {
      const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 2, 6));
      const double cap = uniform(rng, 0.5, 3.0);
      std::vector<double> f(n), fs(n), g(n), gs(n);
      double delta = 0.0, eps = 0.0, cmax = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        f[i] = std::exp(uniform(rng, -1.0, 1.0));
        fs[i] = f[i] * std::exp(uniform(rng, -0.3, 0.3));
        g[i] = uniform(rng, 0.001, cap);
        gs[i] = std::clamp(g[i] + uniform(rng, -0.1, 0.1), 0.001, cap);
        eps = std::max(eps, std::abs(g[i] - gs[i]));
        cmax = std::max({cmax, g[i], gs[i]});
      }
      std::vector<std::size_t> full(n);
      std::iota(full.begin(), full.end(), 0);
      double F = 0.0, Fs = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        delta = std::max(delta, std::abs(detail::normalized(f, i, full) -
                                         detail::normalized(fs, i, full)));
        F += detail::normalized(f, i, full) * g[i];
        Fs += detail::normalized(fs, i, full) * gs[i];
      }
      const double bound = eps + static_cast<double>(n) * cmax * delta;
      if (std::abs(F - Fs) > bound + slack) ++rep.violations;
    }
    reports.push_back(rep);
  }

  {  // Lemma: eps-close weighted averages of lambda-separated values imply
     // 4 eps / lambda close normalized weights
    LemmaReport rep{"lemma4", trials, 0};
    for (long t = 0; t < trials; ++t) {
      const int M = uniform_int(rng, 2, 4);
      const std::size_t n = static_cast<std::size_t>(M);
      const double lambda_target = uniform(rng, 0.2, 0.8);
      std::vector<double> v(n), vs(n), al(n), as(n);
      double base = uniform(rng, 0.1, 0.5);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = base;
        base += lambda_target + uniform(rng, 0.0, 0.2);
        vs[i] = v[i] + uniform(rng, -0.02, 0.02);
        al[i] = std::exp(uniform(rng, -1.0, 1.0));
        as[i] = al[i] * std::exp(uniform(rng, -0.05, 0.05));
      }
      double lambda = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          lambda = std::min(lambda, std::abs(v[i] - v[j]));
      double eps = 0.0;
      const auto subs = detail::subsets_up_to(n, n);
      for (const auto& sub : subs)
        eps = std::max(eps, std::abs(detail::weighted_avg(al, v, sub) -
                                     detail::weighted_avg(as, vs, sub)));
      const double bound = 4.0 * eps / lambda;
      for (const auto& sub : subs)
        for (auto i : sub)
          if (std::abs(detail::normalized(al, i, sub) - detail::normalized(as, i, sub)) >
              bound + slack)
            ++rep.violations;
    }
    reports.push_back(rep);
  }

  return reports;
}

}  // namespace setrl::theory
