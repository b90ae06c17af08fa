#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "setrl/entity.hpp"

// Chamfer-family set distances and the rewards built on them. The
// density-aware form decouples the distance used to match entities (D2) from
// the one used to measure them (D1) and reweighs many-to-one matches by
// partition size.

namespace setrl {

enum class EntityDistance { l1_pos, l2_pos, l2_feat, sq_l2_full };

inline double entity_distance(EntityDistance kind, const Particle& a, const Particle& b) {
  switch (kind) {
    case EntityDistance::l1_pos:
      return (a.pos - b.pos).lpNorm<1>();
    case EntityDistance::l2_pos:
      return (a.pos - b.pos).norm();
    case EntityDistance::l2_feat:
      return (a.feature - b.feature).norm();
    case EntityDistance::sq_l2_full:
      return (a.flat() - b.flat()).squaredNorm();
  }
  throw std::logic_error("unknown distance kind");
}

// D1 measures matched entities, D2 selects the match.
struct DistancePair {
  EntityDistance measure = EntityDistance::l1_pos;  // D1
  EntityDistance match = EntityDistance::l2_feat;   // D2
};

struct RewardConfig {
  double eps = 1e-8;            // density regularizer
  double match_threshold = 0.5;  // C, in D2 units
  double no_match_bonus = -0.2;  // b, added once per unmatched particle
  std::vector<Eigen::VectorXd> interest_codes;
  double smorl_min_reward = -1.0;
};

inline void validate_reward(const RewardConfig& cfg) {
  if (cfg.eps <= 0.0) throw std::invalid_argument("reward eps must be > 0");
  if (cfg.no_match_bonus > 0.0) throw std::invalid_argument("no_match_bonus must be <= 0");
}

namespace detail {

// Rank of each particle in the lexicographic (z_p, z_f, ...) order; used to
// break exact argmin ties deterministically.
inline std::vector<int> canonical_ranks(const std::vector<Particle>& set) {
  std::vector<int> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return particle_less(set[a], set[b]); });
  std::vector<int> rank(set.size());
  for (std::size_t r = 0; r < idx.size(); ++r) rank[idx[r]] = static_cast<int>(r);
  return rank;
}

inline std::vector<int> argmin_matches(const std::vector<Particle>& from,
                                       const std::vector<Particle>& to, EntityDistance match) {
  const auto rank = canonical_ranks(to);
  std::vector<int> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    int best = 0;
    double best_d = entity_distance(match, from[i], to[0]);
    for (std::size_t j = 1; j < to.size(); ++j) {
      const double d = entity_distance(match, from[i], to[j]);
      if (d < best_d || (d == best_d && rank[j] < rank[best])) {
        best = static_cast<int>(j);
        best_d = d;
      }
    }
    out[i] = best;
  }
  return out;
}

enum class ChamferWeighting { density_aware, uniform };

// One directional term: partition `from` by argmin-D2 match into `to`, then
// sum D1 within partitions under the selected weighting.
inline double directional_term(const std::vector<Particle>& from,
                               const std::vector<Particle>& to, const DistancePair& d,
                               double eps, ChamferWeighting weighting) {
  const auto match = argmin_matches(from, to, d.match);
  std::vector<int> count(to.size(), 0);
  std::vector<double> sum(to.size(), 0.0);
  for (std::size_t i = 0; i < from.size(); ++i) {
    count[match[i]] += 1;
    sum[match[i]] += entity_distance(d.measure, from[i], to[match[i]]);
  }
  if (weighting == ChamferWeighting::uniform) {
    double total = 0.0;
    for (std::size_t j = 0; j < to.size(); ++j) total += sum[j];
    return total / static_cast<double>(from.size());
  }
  int nonempty = 0;
  double total = 0.0;
  for (std::size_t j = 0; j < to.size(); ++j) {
    if (count[j] == 0) continue;
    ++nonempty;
    total += sum[j] / (static_cast<double>(count[j]) + eps);
  }
  return total / static_cast<double>(nonempty);
}

inline double gdac_impl(const std::vector<Particle>& x, const std::vector<Particle>& y,
                        const DistancePair& d, double eps, ChamferWeighting weighting) {
  if (x.empty() || y.empty())
    throw std::invalid_argument("chamfer distance needs non-empty sets");
  return directional_term(x, y, d, eps, weighting) +
         directional_term(y, x, d, eps, weighting);
}

}  // namespace detail

// Generalized density-aware Chamfer distance.
inline double gdac(const std::vector<Particle>& x, const std::vector<Particle>& y,
                   const DistancePair& d, double eps = 1e-8) {
  return detail::gdac_impl(x, y, d, eps, detail::ChamferWeighting::density_aware);
}

inline double gdac(const EntitySet& x, const EntitySet& y, const DistancePair& d,
                   double eps = 1e-8) {
  return gdac(x.particles, y.particles, d, eps);
}

// Uniform-weight reduction of the generalized form; with D1 = D2 it
// coincides with standard_chamfer.
inline double gdac_uniform_weights(const std::vector<Particle>& x,
                                   const std::vector<Particle>& y, const DistancePair& d) {
  return detail::gdac_impl(x, y, d, 0.0, detail::ChamferWeighting::uniform);
}

inline double standard_chamfer(const std::vector<Particle>& x, const std::vector<Particle>& y,
                               EntityDistance d = EntityDistance::sq_l2_full) {
  if (x.empty() || y.empty())
    throw std::invalid_argument("chamfer distance needs non-empty sets");
  auto side = [&](const std::vector<Particle>& from, const std::vector<Particle>& to) {
    double total = 0.0;
    for (const auto& f : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : to) best = std::min(best, entity_distance(d, f, t));
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return side(x, y) + side(y, x);
}

// ---- Chamfer-KL between sets of diagonal Gaussians ----

struct DiagGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

inline double kl_divergence(const DiagGaussian& a, const DiagGaussian& b) {
  if (a.mean.size() != b.mean.size() || a.var.size() != a.mean.size() ||
      b.var.size() != b.mean.size())
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  if ((a.var.array() <= 0.0).any() || (b.var.array() <= 0.0).any())
    throw std::invalid_argument("kl_divergence: variances must be positive");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < a.mean.size(); ++i) {
    const double dm = a.mean(i) - b.mean(i);
    kl += 0.5 * (std::log(b.var(i) / a.var(i)) + (a.var(i) + dm * dm) / b.var(i) - 1.0);
  }
  return kl;
}

inline double chamfer_kl(const std::vector<DiagGaussian>& s1,
                         const std::vector<DiagGaussian>& s2) {
  if (s1.empty() || s2.empty()) throw std::invalid_argument("chamfer_kl needs non-empty sets");
  auto side = [](const std::vector<DiagGaussian>& from, const std::vector<DiagGaussian>& to) {
    double total = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, kl_divergence(p, q));
      total += best;
    }
    return total;
  };
  return side(s1, s2) + side(s2, s1);
}

// ---- rewards ----

// Negative GDAC between focused state and goal sets, averaged over the views
// that stay non-empty after filtering, plus a penalty per particle whose best
// D2 match is farther than the threshold.
inline double chamfer_reward(const Observation& obs, const RewardConfig& cfg,
                             const DistancePair& d = {}) {
  validate_reward(cfg);
  if (obs.state_sets.size() != obs.goal_sets.size() || obs.state_sets.empty())
    throw std::invalid_argument("observation needs matching state/goal views");
  double dist_sum = 0.0;
  int active_views = 0;
  int unmatched = 0;
  for (std::size_t k = 0; k < obs.state_sets.size(); ++k) {
    const auto x = filter_of_interest(obs.state_sets[k], cfg.interest_codes,
                                      cfg.match_threshold).particles;
    const auto y = filter_of_interest(obs.goal_sets[k], cfg.interest_codes,
                                      cfg.match_threshold).particles;
    if (x.empty() || y.empty()) continue;
    ++active_views;
    dist_sum += gdac(x, y, d, cfg.eps);
    auto count_unmatched = [&](const std::vector<Particle>& from,
                               const std::vector<Particle>& to) {
      for (const auto& f : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& t : to) best = std::min(best, entity_distance(d.match, f, t));
        if (best > cfg.match_threshold) ++unmatched;
      }
    };
    count_unmatched(x, y);
    count_unmatched(y, x);
  }
  if (active_views == 0)
    throw std::runtime_error("chamfer_reward: all views empty after filtering");
  return -dist_sum / active_views + cfg.no_match_bonus * unmatched;
}

// Single-goal reward: negative L2 position distance to the feature-nearest
// state particle, averaged over views; a view with no feature match within C
// contributes the minimal reward.
inline double smorl_reward(const Observation& obs, const std::vector<Particle>& goal_per_view,
                           double match_threshold = 0.5, double min_reward = -1.0) {
  if (goal_per_view.size() != obs.state_sets.size())
    throw std::invalid_argument("smorl_reward: one goal particle per view required");
  double sum = 0.0;
  for (std::size_t k = 0; k < obs.state_sets.size(); ++k) {
    const Particle& g = goal_per_view[k];
    const Particle* best = nullptr;
    double best_f = std::numeric_limits<double>::infinity();
    for (const auto& p : obs.state_sets[k].particles) {
      if (p.transparency < 0.5) continue;  // masked particles are not matchable
      const double df = (p.feature - g.feature).norm();
      if (df < best_f) {
        best_f = df;
        best = &p;
      }
    }
    if (best == nullptr) throw std::runtime_error("smorl_reward: empty state set");
    sum += best_f > match_threshold ? min_reward : -(g.pos - best->pos).norm();
  }
  return sum / static_cast<double>(obs.state_sets.size());
}

}  // namespace setrl
