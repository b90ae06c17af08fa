#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "setrl/rng.hpp"

// Entity-set data model: scenes are perceived as unordered, multi-view sets
// of latent particles. The oracle encoder below plays the role of a
// pretrained object-centric image model, including its nuisances (per-view
// affine frames, position jitter, occlusion dropout, low-transparency decoy
// particles), without touching pixels.

namespace setrl {

struct Particle {
  Eigen::Vector2d pos = Eigen::Vector2d::Zero();    // z_p
  Eigen::Vector2d scale = Eigen::Vector2d::Ones();  // z_s
  double depth = 0.0;                               // z_d
  double transparency = 1.0;                        // z_t
  Eigen::VectorXd feature;                          // z_f
  // Stable entity index (agent 0, objects 1..N). Only the unstructured
  // baseline may read this; it stands in for privileged matching.
  int entity_tag = -1;

  Eigen::VectorXd flat() const {
    Eigen::VectorXd v(6 + feature.size());
    v << pos, scale, depth, transparency, feature;
    return v;
  }
};

struct EntitySet {
  std::vector<Particle> particles;
  int view_id = 0;
};

struct Observation {
  std::vector<EntitySet> state_sets;  // one per view
  std::vector<EntitySet> goal_sets;   // one per view
};

struct ViewConfig {
  Eigen::Matrix2d affine = Eigen::Matrix2d::Identity();
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();
  double dropout_prob = 0.0;
  double jitter_sigma = 0.0;
  // Optional per-entity override of dropout_prob, indexed by entity tag
  // (agent 0, objects 1..N). May be 1 to force occlusion of one entity.
  std::vector<double> entity_dropout;

  double dropout_for(int tag) const {
    if (tag >= 0 && tag < static_cast<int>(entity_dropout.size())) return entity_dropout[tag];
    return dropout_prob;
  }
};

struct EncoderConfig {
  std::vector<ViewConfig> views;
  int feature_len = 4;
  int decoys_per_view = 2;
  bool guarantee_visibility = true;
  double object_extent = 0.08;  // z_s of object particles
  double agent_extent = 0.06;
};

inline void validate_view(const ViewConfig& v) {
  if (std::abs(v.affine.determinant()) <= 1e-6)
    throw std::invalid_argument("view affine must be invertible");
  if (v.dropout_prob < 0.0 || v.dropout_prob >= 1.0)
    throw std::invalid_argument("dropout_prob must be in [0,1)");
  if (v.jitter_sigma < 0.0) throw std::invalid_argument("jitter_sigma must be >= 0");
}

inline void validate_encoder(const EncoderConfig& cfg, int max_entity_tag = 0) {
  if (cfg.views.empty()) throw std::invalid_argument("need at least one view");
  for (const auto& v : cfg.views) validate_view(v);
  if (cfg.feature_len < 2) throw std::invalid_argument("feature_len must be >= 2");
  if (cfg.guarantee_visibility) {
    for (int tag = 0; tag <= max_entity_tag; ++tag) {
      bool has_clear_view = false;
      for (const auto& v : cfg.views)
        has_clear_view = has_clear_view || v.dropout_for(tag) == 0.0;
      if (!has_clear_view)
        throw std::invalid_argument(
            "guarantee_visibility: entity can be occluded in all views at once");
    }
  }
}

// Fixed per-entity identity codes. Objects get a scaled one-hot over the
// first feature_len-1 dims keyed by color; the agent reserves the last dim.
inline Eigen::VectorXd object_code(int color, int feature_len) {
  if (color < 0) throw std::invalid_argument("color index must be >= 0");
  Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_len);
  const int slots = feature_len - 1;
  f(color % slots) = 1.0 + color / slots;
  return f;
}

inline Eigen::VectorXd agent_code(int feature_len) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_len);
  f(feature_len - 1) = 1.0;
  return f;
}

// Lexicographic order on (z_p, z_f, z_s, z_d, z_t); gives deterministic
// canonical ranks for tie-breaking and multiset comparison.
inline bool particle_less(const Particle& a, const Particle& b) {
  auto cmp = [](double x, double y) { return x < y ? -1 : (x > y ? 1 : 0); };
  for (int i = 0; i < 2; ++i)
    if (int c = cmp(a.pos(i), b.pos(i))) return c < 0;
  for (int i = 0; i < a.feature.size(); ++i)
    if (int c = cmp(a.feature(i), b.feature(i))) return c < 0;
  for (int i = 0; i < 2; ++i)
    if (int c = cmp(a.scale(i), b.scale(i))) return c < 0;
  if (int c = cmp(a.depth, b.depth)) return c < 0;
  return a.transparency < b.transparency;
}

inline bool particle_equal(const Particle& a, const Particle& b) {
  return a.pos == b.pos && a.scale == b.scale && a.depth == b.depth &&
         a.transparency == b.transparency && a.feature == b.feature;
}

inline bool multiset_equal(const EntitySet& a, const EntitySet& b) {
  if (a.particles.size() != b.particles.size()) return false;
  auto sa = a.particles, sb = b.particles;
  std::sort(sa.begin(), sa.end(), particle_less);
  std::sort(sb.begin(), sb.end(), particle_less);
  for (std::size_t i = 0; i < sa.size(); ++i)
    if (!particle_equal(sa[i], sb[i])) return false;
  return true;
}

namespace detail {

inline Particle make_entity_particle(const Eigen::Vector2d& gt_pos, const ViewConfig& view,
                                     const Eigen::VectorXd& code, double extent, int tag,
                                     Rng& rng) {
  Particle p;
  p.pos = view.affine * gt_pos + view.offset;
  if (view.jitter_sigma > 0.0) {
    p.pos.x() += gaussian(rng, 0.0, view.jitter_sigma);
    p.pos.y() += gaussian(rng, 0.0, view.jitter_sigma);
  }
  p.scale = Eigen::Vector2d::Constant(extent);
  p.depth = 0.0;
  p.transparency = 1.0;
  p.feature = code;
  p.entity_tag = tag;
  return p;
}

}  // namespace detail

// Encodes one view-set per configured view. The agent is entity 0 when
// present; objects follow in index order before the per-call shuffle.
inline std::vector<EntitySet> encode_entities(const std::optional<Eigen::Vector2d>& agent_pos,
                                              const std::vector<Eigen::Vector2d>& object_pos,
                                              const std::vector<int>& object_color,
                                              const EncoderConfig& cfg, Rng& rng) {
  if (object_pos.size() != object_color.size())
    throw std::invalid_argument("object position/color count mismatch");
  validate_encoder(cfg, static_cast<int>(object_pos.size()));
  std::vector<EntitySet> sets;
  sets.reserve(cfg.views.size());
  for (std::size_t k = 0; k < cfg.views.size(); ++k) {
    const ViewConfig& view = cfg.views[k];
    EntitySet set;
    set.view_id = static_cast<int>(k);
    auto occluded = [&](int tag) {
      const double p = view.dropout_for(tag);
      return p > 0.0 && uniform(rng, 0.0, 1.0) < p;
    };
    if (agent_pos && !occluded(0))
      set.particles.push_back(detail::make_entity_particle(
          *agent_pos, view, agent_code(cfg.feature_len), cfg.agent_extent, 0, rng));
    for (std::size_t i = 0; i < object_pos.size(); ++i) {
      if (occluded(static_cast<int>(i) + 1)) continue;
      set.particles.push_back(detail::make_entity_particle(
          object_pos[i], view, object_code(object_color[i], cfg.feature_len),
          cfg.object_extent, static_cast<int>(i) + 1, rng));
    }
    for (int d = 0; d < cfg.decoys_per_view; ++d) {
      Particle p;
      p.pos = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
      p.scale = Eigen::Vector2d::Constant(cfg.object_extent);
      p.transparency = 0.0;
      p.feature = Eigen::VectorXd::NullaryExpr(cfg.feature_len,
                                               [&](Eigen::Index) { return uniform(rng, 0.0, 1.0); });
      p.entity_tag = -1;
      set.particles.push_back(std::move(p));
    }
    std::shuffle(set.particles.begin(), set.particles.end(), rng);
    sets.push_back(std::move(set));
  }
  return sets;
}

// Keeps opaque particles whose feature code is within `threshold` of some
// interest code (nearest-code classification); decoys and the agent drop out.
inline EntitySet filter_of_interest(const EntitySet& set,
                                    const std::vector<Eigen::VectorXd>& interest_codes,
                                    double threshold = 0.5) {
  EntitySet out;
  out.view_id = set.view_id;
  for (const Particle& p : set.particles) {
    if (p.transparency < 0.5) continue;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& code : interest_codes)
      best = std::min(best, (p.feature - code).norm());
    if (best <= threshold) out.particles.push_back(p);
  }
  return out;
}

// Per-view frames for the default camera rig: view k rotates the unit square
// by k * 90 degrees about its center.
inline std::vector<ViewConfig> default_views(int count, double jitter_sigma = 0.002,
                                             double dropout_prob = 0.0) {
  std::vector<ViewConfig> views(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    ViewConfig& v = views[static_cast<std::size_t>(k)];
    const double theta = k * M_PI / 2.0;
    const double c = std::round(std::cos(theta)), s = std::round(std::sin(theta));
    v.affine << c, -s, s, c;
    const Eigen::Vector2d center(0.5, 0.5);
    v.offset = center - v.affine * center;
    v.jitter_sigma = jitter_sigma;
    v.dropout_prob = dropout_prob;
  }
  return views;
}

}  // namespace setrl
