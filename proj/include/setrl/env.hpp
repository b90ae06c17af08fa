#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "setrl/entity.hpp"
#include "setrl/rng.hpp"

// Deterministic planar push world. The agent is a kinematic disc moved by
// 2-D position deltas; objects are discs displaced by contact, with overlap
// resolved by fixed-order projection so identical inputs give bit-identical
// states.

namespace setrl {

struct Rect {
  Eigen::Vector2d lo{0.0, 0.0};
  Eigen::Vector2d hi{1.0, 1.0};
};

enum class Variant { plain, adjacent_goals, small_table, ordered_push, sorting };

// Axis-aligned channel with a mouth at the bottom and a closed rear. Interior
// width barely exceeds an object's diameter, so nothing can pass anything
// else inside, and contact can only push objects deeper.
struct Corridor {
  double center_x = 0.5;
  double half_width = 0.044;
  double y_mouth = 0.55;
  double y_rear = 0.95;
  double wall_thickness = 0.03;

  std::vector<Rect> walls() const {
    const double x0 = center_x - half_width, x1 = center_x + half_width;
    return {
        {{x0 - wall_thickness, y_mouth}, {x0, y_rear}},                    // left
        {{x1, y_mouth}, {x1 + wall_thickness, y_rear}},                    // right
        {{x0 - wall_thickness, y_rear}, {x1 + wall_thickness, y_rear + wall_thickness}},  // rear
    };
  }
};

struct TaskConfig {
  int n_objects = 1;
  Variant variant = Variant::plain;
  int horizon = 0;  // 0 picks the per-object-count default
  double object_radius = 0.04;
  double agent_radius = 0.03;
  double success_radius = 0.04;  // R
  double norm_constant = 1.0;    // L
  double a_max = 0.05;
  double adjacency_gap = 0.01;
  double corridor_width_factor = 2.2;  // interior width as a multiple of r
  int sorting_colors = 3;              // X distinct codes in the sorting variant
  int max_placement_attempts = 10000;
};

struct SimState {
  Eigen::Vector2d agent_pos;
  std::vector<Eigen::Vector2d> object_pos;
  std::vector<int> object_code;  // color index per object
  Rect bounds;
  std::optional<Corridor> corridor;
  int step_count = 0;
};

struct GoalConfig {
  std::vector<Eigen::Vector2d> pos;
  std::vector<int> code;
};

struct Metrics {
  int success = 0;
  double success_fraction = 0.0;
  double max_obj_dist = 0.0;
  double avg_obj_dist = 0.0;
  double avg_return = 0.0;
};

inline int default_horizon(int n_objects) {
  if (n_objects <= 1) return 30;
  if (n_objects == 2) return 50;
  return 100;
}

inline int effective_horizon(const TaskConfig& cfg) {
  return cfg.horizon > 0 ? cfg.horizon : default_horizon(cfg.n_objects);
}

inline Rect table_bounds(Variant variant) {
  if (variant == Variant::small_table) return {{0.25, 0.25}, {0.75, 0.75}};
  return {{0.0, 0.0}, {1.0, 1.0}};
}

namespace detail {

constexpr double kContactTol = 1e-9;

inline Eigen::Vector2d clamp_center(const Eigen::Vector2d& p, const Rect& bounds, double radius) {
  Eigen::Vector2d lo = bounds.lo.array() + radius;
  Eigen::Vector2d hi = bounds.hi.array() - radius;
  return p.cwiseMax(lo).cwiseMin(hi);
}

// Minimal translation pushing a disc out of an axis-aligned rectangle.
inline Eigen::Vector2d disc_rect_mtv(const Eigen::Vector2d& c, double radius, const Rect& r) {
  const Eigen::Vector2d closest = c.cwiseMax(r.lo).cwiseMin(r.hi);
  const Eigen::Vector2d delta = c - closest;
  const double d2 = delta.squaredNorm();
  if (d2 >= radius * radius) return Eigen::Vector2d::Zero();
  if (d2 > 1e-24) {
    const double d = std::sqrt(d2);
    return delta * ((radius - d) / d);
  }
  // center inside the rectangle: exit through the nearest face
  const double dl = c.x() - r.lo.x(), dr = r.hi.x() - c.x();
  const double db = c.y() - r.lo.y(), dt = r.hi.y() - c.y();
  const double m = std::min({dl, dr, db, dt});
  if (m == dl) return {-(dl + radius), 0.0};
  if (m == dr) return {dr + radius, 0.0};
  if (m == db) return {0.0, -(db + radius)};
  return {0.0, dt + radius};
}

inline void clamp_disc(Eigen::Vector2d& p, double radius, const SimState& s) {
  p = clamp_center(p, s.bounds, radius);
  if (s.corridor) {
    for (const Rect& w : s.corridor->walls()) p += disc_rect_mtv(p, radius, w);
    p = clamp_center(p, s.bounds, radius);
  }
}

inline bool disc_overlaps_any(const Eigen::Vector2d& p, double radius, const SimState& s) {
  Eigen::Vector2d lo = s.bounds.lo.array() + radius;
  Eigen::Vector2d hi = s.bounds.hi.array() - radius;
  if ((p.array() < lo.array() - kContactTol).any() || (p.array() > hi.array() + kContactTol).any())
    return true;
  if (s.corridor)
    for (const Rect& w : s.corridor->walls())
      if (disc_rect_mtv(p, radius, w).squaredNorm() > 0.0) return true;
  return false;
}

inline Eigen::Vector2d contact_normal(const Eigen::Vector2d& from, const Eigen::Vector2d& to) {
  const Eigen::Vector2d d = to - from;
  const double n = d.norm();
  if (n > 1e-12) return d / n;
  return {1.0, 0.0};  // coincident centers: deterministic tie break
}

inline double point_segment_dist(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace detail

namespace detail {

// One projection pass group over the current configuration; returns whether
// anything moved. Objects yield to the agent first; pairs separate
// symmetrically in index order; walls and bounds clamp last, and the agent
// backs off from objects that could not move.
inline void resolve_contacts(SimState& n, const TaskConfig& cfg) {
  const double r_sum = cfg.agent_radius + cfg.object_radius;
  const double r_pair = 2.0 * cfg.object_radius;
  const int count = static_cast<int>(n.object_pos.size());
  for (int iter = 0; iter < 8; ++iter) {
    bool moved = false;
    for (int i = 0; i < count; ++i) {
      const double dist = (n.object_pos[i] - n.agent_pos).norm();
      if (dist < r_sum - kContactTol) {
        n.object_pos[i] += contact_normal(n.agent_pos, n.object_pos[i]) * (r_sum - dist);
        moved = true;
      }
    }
    for (int i = 0; i < count; ++i) {
      for (int j = i + 1; j < count; ++j) {
        const double dist = (n.object_pos[j] - n.object_pos[i]).norm();
        if (dist < r_pair - kContactTol) {
          const Eigen::Vector2d half =
              contact_normal(n.object_pos[i], n.object_pos[j]) * (0.5 * (r_pair - dist));
          n.object_pos[i] -= half;
          n.object_pos[j] += half;
          moved = true;
        }
      }
    }
    for (int i = 0; i < count; ++i) {
      const Eigen::Vector2d before = n.object_pos[i];
      clamp_disc(n.object_pos[i], cfg.object_radius, n);
      moved = moved || (before != n.object_pos[i]);
    }
    for (int i = 0; i < count; ++i) {
      const double dist = (n.object_pos[i] - n.agent_pos).norm();
      if (dist < r_sum - kContactTol) {
        n.agent_pos += contact_normal(n.object_pos[i], n.agent_pos) * (r_sum - dist);
        clamp_disc(n.agent_pos, cfg.agent_radius, n);
        moved = true;
      }
    }
    if (!moved) break;
  }
}

}  // namespace detail

// One kinematic step. The agent's displacement is applied in substeps short
// enough that nothing can tunnel through a wall in one motion; each substep
// resolves overlaps by projection in a fixed order, so identical inputs give
// bit-identical outputs. When an object cannot yield (wall or another
// object), the agent yields instead.
inline SimState step(const SimState& s, Eigen::Vector2d action, const TaskConfig& cfg) {
  SimState n = s;
  action = action.cwiseMax(-cfg.a_max).cwiseMin(cfg.a_max);

  // Contact-free moves are applied exactly in one shot.
  const Eigen::Vector2d target = n.agent_pos + action;
  bool free_move = !n.corridor.has_value() &&
                   detail::clamp_center(target, n.bounds, cfg.agent_radius) == target;
  const double r_sum = cfg.agent_radius + cfg.object_radius;
  for (std::size_t i = 0; free_move && i < n.object_pos.size(); ++i) {
    free_move = detail::point_segment_dist(n.object_pos[i], n.agent_pos, target) >= r_sum;
    for (std::size_t j = i + 1; free_move && j < n.object_pos.size(); ++j)
      free_move = (n.object_pos[j] - n.object_pos[i]).norm() >= 2.0 * cfg.object_radius -
                                                                    detail::kContactTol;
  }
  if (free_move) {
    n.agent_pos = target;
  } else {
    constexpr double kMaxSubstep = 0.01;
    const double len = action.template lpNorm<Eigen::Infinity>();
    const int substeps = std::max(1, static_cast<int>(std::ceil(len / kMaxSubstep)));
    const Eigen::Vector2d delta = action / substeps;
    for (int sub = 0; sub < substeps; ++sub) {
      n.agent_pos += delta;
      detail::clamp_disc(n.agent_pos, cfg.agent_radius, n);
      detail::resolve_contacts(n, cfg);
    }
  }
  n.step_count = s.step_count + 1;
  return n;
}

namespace detail {

inline Eigen::Vector2d sample_in(const Rect& bounds, double radius, Rng& rng) {
  return {uniform(rng, bounds.lo.x() + radius, bounds.hi.x() - radius),
          uniform(rng, bounds.lo.y() + radius, bounds.hi.y() - radius)};
}

inline bool far_from_all(const Eigen::Vector2d& p, const std::vector<Eigen::Vector2d>& others,
                         double min_dist) {
  for (const auto& o : others)
    if ((p - o).norm() < min_dist) return false;
  return true;
}

// All-pairwise-adjacent cluster for up to three goals: side lengths drawn in
// [2r, 2r+gap], then a random rigid placement inside the bounds.
inline std::vector<Eigen::Vector2d> sample_adjacent_cluster(int n, const TaskConfig& cfg,
                                                            const SimState& s, Rng& rng) {
  const double r2 = 2.0 * cfg.object_radius;
  for (int attempt = 0; attempt < cfg.max_placement_attempts; ++attempt) {
    std::vector<Eigen::Vector2d> local;
    if (n == 1) {
      local = {{0.0, 0.0}};
    } else if (n == 2) {
      local = {{0.0, 0.0}, {uniform(rng, r2, r2 + cfg.adjacency_gap), 0.0}};
    } else if (n == 3) {
      const double a = uniform(rng, r2, r2 + cfg.adjacency_gap);
      const double b = uniform(rng, r2, r2 + cfg.adjacency_gap);
      const double c = uniform(rng, r2, r2 + cfg.adjacency_gap);
      // triangle with |P0P1| = a, |P0P2| = b, |P1P2| = c
      const double x = (a * a + b * b - c * c) / (2.0 * a);
      const double y2 = b * b - x * x;
      if (y2 <= 0.0) continue;
      local = {{0.0, 0.0}, {a, 0.0}, {x, std::sqrt(y2)}};
    } else {
      // chain adjacency for larger clusters
      local = {{0.0, 0.0}};
      bool ok = true;
      for (int i = 1; i < n && ok; ++i) {
        ok = false;
        for (int inner = 0; inner < 100; ++inner) {
          const double ang = uniform(rng, 0.0, 2.0 * M_PI);
          const double d = uniform(rng, r2, r2 + cfg.adjacency_gap);
          Eigen::Vector2d cand = local.back() + d * Eigen::Vector2d{std::cos(ang), std::sin(ang)};
          if (far_from_all(cand, local, r2)) {
            local.push_back(cand);
            ok = true;
            break;
          }
        }
      }
      if (!ok) continue;
    }
    const double theta = uniform(rng, 0.0, 2.0 * M_PI);
    Eigen::Matrix2d rot;
    rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    const Eigen::Vector2d shift = sample_in(s.bounds, cfg.object_radius + r2, rng);
    std::vector<Eigen::Vector2d> placed;
    bool inside = true;
    for (const auto& p : local) {
      Eigen::Vector2d q = rot * p + shift;
      const Eigen::Vector2d lo = s.bounds.lo.array() + cfg.object_radius;
      const Eigen::Vector2d hi = s.bounds.hi.array() - cfg.object_radius;
      inside = inside && (q.array() >= lo.array()).all() && (q.array() <= hi.array()).all();
      placed.push_back(q);
    }
    if (inside) return placed;
  }
  throw std::runtime_error("adjacent goal placement failed");
}

}  // namespace detail

// Samples a fresh episode: non-overlapping object layout, agent spawn and a
// goal configuration per task variant.
inline std::pair<SimState, GoalConfig> reset(const TaskConfig& cfg, Rng& rng) {
  if (cfg.n_objects < 1) throw std::invalid_argument("n_objects must be >= 1");
  if (cfg.variant == Variant::sorting &&
      (cfg.sorting_colors < 1 || cfg.sorting_colors > cfg.n_objects))
    throw std::invalid_argument("sorting_colors must be in [1, n_objects]");
  if (cfg.variant == Variant::ordered_push && cfg.n_objects != 2)
    throw std::invalid_argument("ordered_push needs exactly 2 objects");

  SimState s;
  s.bounds = table_bounds(cfg.variant);
  s.step_count = 0;
  if (cfg.variant == Variant::ordered_push) {
    Corridor c;
    c.half_width = 0.5 * cfg.corridor_width_factor * cfg.object_radius;
    s.corridor = c;
  }
  s.object_code.resize(cfg.n_objects);
  for (int i = 0; i < cfg.n_objects; ++i)
    s.object_code[i] = (cfg.variant == Variant::sorting) ? i % cfg.sorting_colors : i;

  const double sep = 2.0 * cfg.object_radius + 0.01;
  auto blocked_by_walls = [&](const Eigen::Vector2d& p, double radius) {
    if (!s.corridor) return false;
    for (const Rect& w : s.corridor->walls())
      if (detail::disc_rect_mtv(p, radius, w).squaredNorm() > 0.0) return true;
    return false;
  };

  for (int attempt = 0;; ++attempt) {
    if (attempt >= cfg.max_placement_attempts)
      throw std::runtime_error("object placement failed: workspace too crowded");
    s.object_pos.clear();
    bool ok = true;
    for (int i = 0; i < cfg.n_objects && ok; ++i) {
      Eigen::Vector2d p = detail::sample_in(s.bounds, cfg.object_radius, rng);
      ok = detail::far_from_all(p, s.object_pos, sep) && !blocked_by_walls(p, cfg.object_radius);
      // ordered_push objects start outside the corridor
      if (ok && s.corridor && p.y() > s.corridor->y_mouth - cfg.object_radius &&
          std::abs(p.x() - s.corridor->center_x) <
              s.corridor->half_width + s.corridor->wall_thickness + cfg.object_radius)
        ok = false;
      if (ok) s.object_pos.push_back(p);
    }
    if (!ok) continue;
    bool agent_ok = false;
    for (int inner = 0; inner < 100 && !agent_ok; ++inner) {
      s.agent_pos = detail::sample_in(s.bounds, cfg.agent_radius, rng);
      agent_ok = detail::far_from_all(s.agent_pos, s.object_pos,
                                      cfg.agent_radius + cfg.object_radius + 0.01) &&
                 !blocked_by_walls(s.agent_pos, cfg.agent_radius);
    }
    if (agent_ok) break;
  }

  GoalConfig g;
  const int n_goals = (cfg.variant == Variant::sorting) ? cfg.sorting_colors : cfg.n_objects;
  g.code.resize(n_goals);
  for (int i = 0; i < n_goals; ++i) g.code[i] = (cfg.variant == Variant::sorting) ? i : s.object_code[i];

  if (cfg.variant == Variant::adjacent_goals) {
    g.pos = detail::sample_adjacent_cluster(n_goals, cfg, s, rng);
  } else if (cfg.variant == Variant::ordered_push) {
    const Corridor& c = *s.corridor;
    const double r = cfg.object_radius;
    const double x_lo = c.center_x - (c.half_width - r), x_hi = c.center_x + (c.half_width - r);
    const double rear_y = uniform(rng, c.y_rear - 3.0 * r, c.y_rear - r);
    const double front_y = uniform(rng, c.y_mouth + r, rear_y - 2.0 * r);
    const int rear_object = uniform_int(rng, 0, 1);
    g.pos.resize(2);
    g.pos[rear_object] = {uniform(rng, x_lo, x_hi), rear_y};
    g.pos[1 - rear_object] = {uniform(rng, x_lo, x_hi), front_y};
  } else {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= cfg.max_placement_attempts)
        throw std::runtime_error("goal placement failed: workspace too crowded");
      g.pos.clear();
      bool ok = true;
      for (int i = 0; i < n_goals && ok; ++i) {
        Eigen::Vector2d p = detail::sample_in(s.bounds, cfg.object_radius, rng);
        ok = detail::far_from_all(p, g.pos, sep) && !blocked_by_walls(p, cfg.object_radius);
        if (ok) g.pos.push_back(p);
      }
      if (ok) break;
    }
  }
  return {s, g};
}

namespace detail {

// Distance of each object to its paired goal: index-paired for ordinary
// variants (codes must agree), code-matched for sorting-style goals.
inline std::vector<double> goal_distances(const SimState& s, const GoalConfig& g) {
  const std::size_t n = s.object_pos.size();
  std::vector<double> d(n);
  if (g.pos.size() == n) {
    for (std::size_t i = 0; i < n; ++i) {
      if (g.code[i] != s.object_code[i])
        throw std::invalid_argument("goal/object code mismatch");
      d[i] = (g.pos[i] - s.object_pos[i]).norm();
    }
    return d;
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool found = false;
    for (std::size_t j = 0; j < g.pos.size(); ++j) {
      if (g.code[j] == s.object_code[i]) {
        d[i] = (g.pos[j] - s.object_pos[i]).norm();
        found = true;
        break;
      }
    }
    if (!found) throw std::invalid_argument("object code has no goal");
  }
  return d;
}

}  // namespace detail

// Mean negative L2 distance between objects and their goals, normalized by L.
inline double gt_reward(const SimState& s, const GoalConfig& g, const TaskConfig& cfg) {
  const auto d = detail::goal_distances(s, g);
  double sum = 0.0;
  for (double v : d) sum += v;
  return -sum / (static_cast<double>(d.size()) * cfg.norm_constant);
}

// trajectory = states s_0..s_T (T >= 1 steps taken).
inline Metrics episode_metrics(const std::vector<SimState>& trajectory, const GoalConfig& g,
                               const TaskConfig& cfg) {
  if (trajectory.size() < 2)
    throw std::invalid_argument("episode_metrics: need at least one step");
  Metrics m;
  const auto d = detail::goal_distances(trajectory.back(), g);
  int hits = 0;
  double sum = 0.0;
  for (double v : d) {
    hits += v < cfg.success_radius ? 1 : 0;
    sum += v;
    m.max_obj_dist = std::max(m.max_obj_dist, v);
  }
  m.success_fraction = static_cast<double>(hits) / static_cast<double>(d.size());
  m.success = hits == static_cast<int>(d.size()) ? 1 : 0;
  m.avg_obj_dist = sum / static_cast<double>(d.size());
  double ret = 0.0;
  for (std::size_t t = 1; t < trajectory.size(); ++t) ret += gt_reward(trajectory[t], g, cfg);
  m.avg_return = ret / static_cast<double>(trajectory.size() - 1);
  return m;
}

// ---- observation bridge ----

inline std::vector<EntitySet> encode_state(const SimState& s, const EncoderConfig& enc, Rng& rng) {
  return encode_entities(s.agent_pos, s.object_pos, s.object_code, enc, rng);
}

inline std::vector<EntitySet> encode_goal(const GoalConfig& g, const EncoderConfig& enc, Rng& rng) {
  return encode_entities(std::nullopt, g.pos, g.code, enc, rng);
}

inline Observation observe(const SimState& s, const GoalConfig& g, const EncoderConfig& enc,
                           Rng& rng) {
  Observation o;
  o.state_sets = encode_state(s, enc, rng);
  o.goal_sets = encode_goal(g, enc, rng);
  return o;
}

// One JSONL record per step: {t, agent_pos, object_pos, action, reward}.
inline void dump_trajectory_jsonl(std::ostream& os, const std::vector<SimState>& states,
                                  const std::vector<Eigen::Vector2d>& actions,
                                  const std::vector<double>& rewards) {
  if (states.size() != actions.size() + 1 || actions.size() != rewards.size())
    throw std::invalid_argument("trajectory arrays inconsistent");
  os.precision(17);
  for (std::size_t t = 0; t < actions.size(); ++t) {
    const SimState& s = states[t + 1];
    os << "{\"t\":" << t << ",\"agent_pos\":[" << s.agent_pos.x() << ',' << s.agent_pos.y()
       << "],\"object_pos\":[";
    for (std::size_t i = 0; i < s.object_pos.size(); ++i) {
      if (i) os << ',';
      os << '[' << s.object_pos[i].x() << ',' << s.object_pos[i].y() << ']';
    }
    os << "],\"action\":[" << actions[t].x() << ',' << actions[t].y() << "],\"reward\":" << rewards[t]
       << "}\n";
  }
}

}  // namespace setrl
