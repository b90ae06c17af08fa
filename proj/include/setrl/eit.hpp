#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "setrl/autodiff.hpp"
#include "setrl/entity.hpp"
#include "setrl/params.hpp"
#include "setrl/rng.hpp"

// Entity Interaction Transformer: a permutation-invariant policy/Q network
// over unaligned multi-view particle sets. State particles (plus an embedded
// action entity for the Q-function) flow through SA -> CA -> SA; cross
// attention conditions on goal particles; a learned aggregation query reduces
// the processed set to one vector for the output MLP. Particles with low
// transparency and padding slots are excluded by attention masking and can
// never influence the output.

namespace setrl {

struct EITConfig {
  int feature_len = 4;   // l
  int views = 2;         // K
  int dim = 64;          // d
  int heads = 8;
  int ff_hidden = 256;   // transformer block MLP width
  int head_hidden = 256; // output MLP width
  int head_layers = 3;
  int action_dim = 2;
  double a_max = 0.05;

  int particle_dim() const { return 6 + feature_len; }

  void validate() const {
    if (dim % heads != 0) throw std::invalid_argument("dim must be divisible by heads");
    if (views < 1 || feature_len < 2 || head_layers < 1)
      throw std::invalid_argument("bad EIT config");
  }
};

struct AttentionBlockParams {
  int ln1_g = -1, ln1_b = -1;
  int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
  int ln_kv_g = -1, ln_kv_b = -1;  // cross-attention key/value norm
  int ln2_g = -1, ln2_b = -1;      // feed-forward norm
  int ff1 = -1, ff1b = -1, ff2 = -1, ff2b = -1;
};

struct EITParams {
  int input_embed_w = -1, input_embed_b = -1;
  int view_embed = -1;
  int action_embed_w = -1, action_embed_b = -1;  // only when with_action
  AttentionBlockParams sa1, ca, sa2;
  int agg_token = -1;
  AttentionBlockParams aa;  // aggregation attention: wq..wo + ln_kv only
  std::vector<int> head_w, head_b;
  bool with_action = false;
};

namespace detail {

template <class S>
int add_linear(ParamStore<S>& store, const std::string& name, int in, int out, Rng& rng,
               int* bias_idx) {
  const int w = store.add(name + ".w", in, out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < out; ++j) store[w](i, j) = static_cast<S>(uniform(rng, -bound, bound));
  *bias_idx = store.add(name + ".b", 1, out);
  return w;
}

template <class S>
void add_layer_norm(ParamStore<S>& store, const std::string& name, int dim, int* g, int* b) {
  *g = store.add(name + ".g", 1, dim);
  store[*g].setOnes();
  *b = store.add(name + ".b", 1, dim);
}

template <class S>
AttentionBlockParams add_block(ParamStore<S>& store, const std::string& name, const EITConfig& cfg,
                               Rng& rng, bool cross, bool feed_forward) {
  AttentionBlockParams p;
  add_layer_norm(store, name + ".ln1", cfg.dim, &p.ln1_g, &p.ln1_b);
  p.wq = add_linear(store, name + ".q", cfg.dim, cfg.dim, rng, &p.bq);
  p.wk = add_linear(store, name + ".k", cfg.dim, cfg.dim, rng, &p.bk);
  p.wv = add_linear(store, name + ".v", cfg.dim, cfg.dim, rng, &p.bv);
  p.wo = add_linear(store, name + ".o", cfg.dim, cfg.dim, rng, &p.bo);
  if (cross) add_layer_norm(store, name + ".ln_kv", cfg.dim, &p.ln_kv_g, &p.ln_kv_b);
  if (feed_forward) {
    add_layer_norm(store, name + ".ln2", cfg.dim, &p.ln2_g, &p.ln2_b);
    p.ff1 = add_linear(store, name + ".ff1", cfg.dim, cfg.ff_hidden, rng, &p.ff1b);
    p.ff2 = add_linear(store, name + ".ff2", cfg.ff_hidden, cfg.dim, rng, &p.ff2b);
  }
  return p;
}

}  // namespace detail

// Registers all EIT tensors in `store` under `prefix`. Parameter count is a
// function of (d, h, K, l, d_a) only, never of entity count.
template <class S>
inline EITParams build_eit(ParamStore<S>& store, const EITConfig& cfg, Rng& rng,
                           bool with_action, int out_dim, const std::string& prefix = "eit") {
  cfg.validate();
  EITParams p;
  p.with_action = with_action;
  p.input_embed_w =
      detail::add_linear(store, prefix + "/input_embed", cfg.particle_dim(), cfg.dim, rng,
                         &p.input_embed_b);
  p.view_embed = store.add(prefix + "/view_embed", cfg.views, cfg.dim);
  for (int i = 0; i < cfg.views; ++i)
    for (int j = 0; j < cfg.dim; ++j)
      store[p.view_embed](i, j) = static_cast<S>(gaussian(rng, 0.0, 0.02));
  if (with_action)
    p.action_embed_w = detail::add_linear(store, prefix + "/action_embed", cfg.action_dim,
                                          cfg.particle_dim(), rng, &p.action_embed_b);
  p.sa1 = detail::add_block(store, prefix + "/sa1", cfg, rng, false, true);
  p.ca = detail::add_block(store, prefix + "/ca", cfg, rng, true, true);
  p.sa2 = detail::add_block(store, prefix + "/sa2", cfg, rng, false, true);
  p.agg_token = store.add(prefix + "/agg_token", 1, cfg.dim);
  for (int j = 0; j < cfg.dim; ++j)
    store[p.agg_token](0, j) = static_cast<S>(gaussian(rng, 0.0, 0.02));
  p.aa = detail::add_block(store, prefix + "/aa", cfg, rng, true, false);
  int in = cfg.dim;
  for (int layer = 0; layer < cfg.head_layers; ++layer) {
    const bool last = layer == cfg.head_layers - 1;
    const int out = last ? out_dim : cfg.head_hidden;
    int b = -1;
    const int w = detail::add_linear(store, prefix + "/head" + std::to_string(layer), in, out,
                                     rng, &b);
    p.head_w.push_back(w);
    p.head_b.push_back(b);
    in = out;
  }
  return p;
}

// ---- batched set layout ----

struct SetBatchLayout {
  int batch = 0;
  // state side; each sample's segment ends with the action slot in Q mode
  std::vector<int> s_off;
  std::vector<int> s_view;            // -1 for action/padding rows
  std::vector<std::uint8_t> s_attend;  // attendable as key
  std::vector<int> particle_rows;      // destination of raw state rows
  std::vector<int> action_rows;        // destination of the action entity per sample
  // goal side
  std::vector<int> g_off;
  std::vector<int> g_view;
  std::vector<std::uint8_t> g_attend;
};

template <class S>
struct SetBatch {
  SetBatchLayout lay;
  ad::Mat<S> state_raw;  // real + padding state particles, batch order
  ad::Mat<S> goal_raw;
};

// Observations enter networks as stacked raw particle rows with per-sample
// segments. Transparency below 0.5 masks a particle; `pad_state_to` /
// `pad_goal_to` append explicitly invalid rows (they must never matter).
template <class S>
inline SetBatch<S> build_set_batch(const std::vector<const Observation*>& observations,
                                   const EITConfig& cfg, bool with_action, int pad_state_to = 0,
                                   int pad_goal_to = 0) {
  SetBatch<S> b;
  b.lay.batch = static_cast<int>(observations.size());
  const int pdim = cfg.particle_dim();
  int g_rows = 0, raw_state_rows = 0;
  for (const auto* obs_ptr : observations) {
    const Observation& obs = *obs_ptr;
    if (static_cast<int>(obs.state_sets.size()) != cfg.views ||
        static_cast<int>(obs.goal_sets.size()) != cfg.views)
      throw std::invalid_argument("observation view count does not match config");
    int ns = 0, ng = 0;
    for (const auto& set : obs.state_sets) ns += static_cast<int>(set.particles.size());
    for (const auto& set : obs.goal_sets) ng += static_cast<int>(set.particles.size());
    ns = std::max(ns, pad_state_to);
    ng = std::max(ng, pad_goal_to);
    raw_state_rows += ns;
    g_rows += ng;
  }
  b.state_raw = ad::Mat<S>::Zero(raw_state_rows, pdim);
  b.goal_raw = ad::Mat<S>::Zero(g_rows, pdim);
  b.lay.s_off.push_back(0);
  b.lay.g_off.push_back(0);
  int srow = 0, grow = 0, sraw = 0;
  for (const auto* obs_ptr : observations) {
    const Observation& obs = *obs_ptr;
    int attendable_s = 0, attendable_g = 0, sample_rows = 0;
    auto put = [&](const Particle& p, ad::Mat<S>& dst, int row) {
      if (p.feature.size() != cfg.feature_len)
        throw std::invalid_argument("particle feature length does not match config");
      dst(row, 0) = static_cast<S>(p.pos.x());
      dst(row, 1) = static_cast<S>(p.pos.y());
      dst(row, 2) = static_cast<S>(p.scale.x());
      dst(row, 3) = static_cast<S>(p.scale.y());
      dst(row, 4) = static_cast<S>(p.depth);
      dst(row, 5) = static_cast<S>(p.transparency);
      for (int f = 0; f < cfg.feature_len; ++f) dst(row, 6 + f) = static_cast<S>(p.feature(f));
    };
    for (const auto& set : obs.state_sets) {
      for (const auto& p : set.particles) {
        put(p, b.state_raw, sraw);
        b.lay.particle_rows.push_back(srow);
        b.lay.s_view.push_back(set.view_id);
        const bool attend = p.transparency >= 0.5;
        b.lay.s_attend.push_back(attend);
        attendable_s += attend;
        ++srow;
        ++sraw;
        ++sample_rows;
      }
    }
    for (; sample_rows < pad_state_to; ++sample_rows) {  // padding slots
      b.lay.particle_rows.push_back(srow);
      b.lay.s_view.push_back(-1);
      b.lay.s_attend.push_back(0);
      ++srow;
      ++sraw;
    }
    if (with_action) {
      b.lay.action_rows.push_back(srow);
      b.lay.s_view.push_back(-1);
      b.lay.s_attend.push_back(1);
      ++srow;
    }
    int gsample = 0;
    for (const auto& set : obs.goal_sets) {
      for (const auto& p : set.particles) {
        put(p, b.goal_raw, grow);
        b.lay.g_view.push_back(set.view_id);
        const bool attend = p.transparency >= 0.5;
        b.lay.g_attend.push_back(attend);
        attendable_g += attend;
        ++grow;
        ++gsample;
      }
    }
    for (; gsample < pad_goal_to; ++gsample) {
      b.lay.g_view.push_back(-1);
      b.lay.g_attend.push_back(0);
      ++grow;
    }
    if (attendable_s == 0) throw std::invalid_argument("sample has no visible state particle");
    if (attendable_g == 0) throw std::invalid_argument("sample has no visible goal particle");
    b.lay.s_off.push_back(srow);
    b.lay.g_off.push_back(grow);
  }
  return b;
}

template <class S>
inline SetBatch<S> build_set_batch(std::span<const Observation> observations,
                                   const EITConfig& cfg, bool with_action, int pad_state_to = 0,
                                   int pad_goal_to = 0) {
  std::vector<const Observation*> ptrs;
  ptrs.reserve(observations.size());
  for (const auto& o : observations) ptrs.push_back(&o);
  return build_set_batch<S>(ptrs, cfg, with_action, pad_state_to, pad_goal_to);
}

template <class S>
inline SetBatch<S> build_set_batch(const Observation& obs, const EITConfig& cfg,
                                   bool with_action) {
  return build_set_batch<S>(std::span<const Observation>(&obs, 1), cfg, with_action);
}

// ---- forward passes ----

namespace detail {

template <class S>
ad::Var linear(ad::Tape<S>& t, ad::Var x, const std::vector<ad::Var>& w, int wi, int bi) {
  return t.add_rowvec(t.matmul(x, w[wi]), w[bi]);
}

template <class S>
ad::Var attn_sub(ad::Tape<S>& t, ad::Var q_in, ad::Var kv_in, const std::vector<ad::Var>& w,
                 const AttentionBlockParams& p, const ad::AttnSpec& spec) {
  ad::Var q = linear(t, q_in, w, p.wq, p.bq);
  ad::Var k = linear(t, kv_in, w, p.wk, p.bk);
  ad::Var v = linear(t, kv_in, w, p.wv, p.bv);
  return linear(t, t.masked_attention(q, k, v, spec), w, p.wo, p.bo);
}

template <class S>
ad::Var ff_sub(ad::Tape<S>& t, ad::Var x, const std::vector<ad::Var>& w,
               const AttentionBlockParams& p) {
  ad::Var n = t.layer_norm(x, w[p.ln2_g], w[p.ln2_b]);
  return t.add(x, linear(t, t.gelu(linear(t, n, w, p.ff1, p.ff1b)), w, p.ff2, p.ff2b));
}

template <class S>
ad::Var sa_block(ad::Tape<S>& t, ad::Var x, const std::vector<ad::Var>& w,
                 const AttentionBlockParams& p, const ad::AttnSpec& spec) {
  ad::Var n = t.layer_norm(x, w[p.ln1_g], w[p.ln1_b]);
  x = t.add(x, attn_sub(t, n, n, w, p, spec));
  return ff_sub(t, x, w, p);
}

template <class S>
ad::Var ca_block(ad::Tape<S>& t, ad::Var x, ad::Var memory, const std::vector<ad::Var>& w,
                 const AttentionBlockParams& p, const ad::AttnSpec& spec) {
  ad::Var n = t.layer_norm(x, w[p.ln1_g], w[p.ln1_b]);
  ad::Var m = t.layer_norm(memory, w[p.ln_kv_g], w[p.ln_kv_b]);
  x = t.add(x, attn_sub(t, n, m, w, p, spec));
  return ff_sub(t, x, w, p);
}

// Embeds particles + learned additive view encoding; assembles the action
// entity (already projected to particle space) into its slot.
template <class S>
ad::Var embed_state(ad::Tape<S>& t, const std::vector<ad::Var>& w, const EITParams& p,
                    const SetBatch<S>& b, ad::Var action) {
  ad::Var praw = t.leaf(b.state_raw);
  ad::Var pemb = linear(t, praw, w, p.input_embed_w, p.input_embed_b);
  ad::Var e = pemb;
  if (p.with_action) {
    if (!action.valid()) throw std::invalid_argument("q forward requires an action");
    ad::Var ap = linear(t, action, w, p.action_embed_w, p.action_embed_b);
    ad::Var aemb = linear(t, ap, w, p.input_embed_w, p.input_embed_b);
    e = t.assemble_rows(static_cast<int>(b.lay.s_view.size()),
                        static_cast<int>(t.val(pemb).cols()),
                        {{pemb, b.lay.particle_rows}, {aemb, b.lay.action_rows}});
  }
  return t.add_gather_rows(e, w[p.view_embed], b.lay.s_view);
}

template <class S>
ad::Var eit_trunk(ad::Tape<S>& t, const std::vector<ad::Var>& w, const EITParams& p,
                  const EITConfig& cfg, const SetBatch<S>& b, ad::Var action) {
  ad::Var e = embed_state(t, w, p, b, action);
  ad::Var graw = t.leaf(b.goal_raw);
  ad::Var g = linear(t, graw, w, p.input_embed_w, p.input_embed_b);
  g = t.add_gather_rows(g, w[p.view_embed], b.lay.g_view);

  ad::AttnSpec sa_spec{cfg.heads, b.lay.s_off, b.lay.s_off, b.lay.s_attend};
  ad::AttnSpec ca_spec{cfg.heads, b.lay.s_off, b.lay.g_off, b.lay.g_attend};
  e = sa_block(t, e, w, p.sa1, sa_spec);
  e = ca_block(t, e, g, w, p.ca, ca_spec);
  e = sa_block(t, e, w, p.sa2, sa_spec);

  // aggregation: one learned query per sample over the processed set
  std::vector<int> one_per_sample(static_cast<std::size_t>(b.lay.batch) + 1);
  for (int i = 0; i <= b.lay.batch; ++i) one_per_sample[static_cast<std::size_t>(i)] = i;
  ad::AttnSpec aa_spec{cfg.heads, one_per_sample, b.lay.s_off, b.lay.s_attend};
  ad::Var token = t.repeat_row(w[p.agg_token], b.lay.batch);
  ad::Var kv = t.layer_norm(e, w[p.aa.ln_kv_g], w[p.aa.ln_kv_b]);
  ad::Var agg = attn_sub(t, token, kv, w, p.aa, aa_spec);

  ad::Var h = agg;
  for (std::size_t layer = 0; layer < p.head_w.size(); ++layer) {
    h = linear(t, h, w, p.head_w[layer], p.head_b[layer]);
    if (layer + 1 < p.head_w.size()) h = t.gelu(h);
  }
  return h;
}

}  // namespace detail

// Batched policy forward: (batch x action_dim) actions squashed to [-a_max, a_max].
template <class S>
inline ad::Var eit_policy_batch(ad::Tape<S>& t, const std::vector<ad::Var>& w,
                                const EITParams& p, const EITConfig& cfg, const SetBatch<S>& b) {
  if (p.with_action) throw std::invalid_argument("policy params must not carry an action embed");
  ad::Var h = detail::eit_trunk(t, w, p, cfg, b, ad::Var{});
  return t.scale(t.tanh_op(h), static_cast<S>(cfg.a_max));
}

// Batched Q forward: (batch x 1) values; `action` is a (batch x action_dim) var.
template <class S>
inline ad::Var eit_q_batch(ad::Tape<S>& t, const std::vector<ad::Var>& w, const EITParams& p,
                           const EITConfig& cfg, const SetBatch<S>& b, ad::Var action) {
  if (!p.with_action) throw std::invalid_argument("q params require with_action");
  return detail::eit_trunk(t, w, p, cfg, b, action);
}

// Single-observation conveniences over a non-recording tape.
template <class S>
inline Eigen::Vector2d eit_policy_forward(const ParamStore<S>& store, const EITParams& p,
                                          const EITConfig& cfg, const Observation& obs) {
  ad::Tape<S> t(false);
  auto w = bind_store(t, store, false);
  auto b = build_set_batch<S>(obs, cfg, false);
  ad::Var a = eit_policy_batch(t, w, p, cfg, b);
  return {static_cast<double>(t.val(a)(0, 0)), static_cast<double>(t.val(a)(0, 1))};
}

template <class S>
inline double eit_q_forward(const ParamStore<S>& store, const EITParams& p, const EITConfig& cfg,
                            const Observation& obs, const Eigen::Vector2d& action) {
  ad::Tape<S> t(false);
  auto w = bind_store(t, store, false);
  auto b = build_set_batch<S>(obs, cfg, true);
  ad::Mat<S> a(1, 2);
  a << static_cast<S>(action.x()), static_cast<S>(action.y());
  ad::Var q = eit_q_batch(t, w, p, cfg, b, t.leaf(std::move(a)));
  return static_cast<double>(t.val(q)(0, 0));
}

// ---- unstructured baseline ----
// Concatenates every entity in a privileged canonical order (view, then
// entity tag) and runs a plain MLP; requires a fixed entity count.

struct UnstructuredConfig {
  int feature_len = 4;
  int views = 2;
  int state_entities = 2;  // per view, incl. agent
  int goal_entities = 1;   // per view
  int hidden = 256;
  int layers = 5;
  int action_dim = 2;
  double a_max = 0.05;

  int particle_dim() const { return 6 + feature_len; }
  int input_width(bool with_action) const {
    return views * (state_entities + goal_entities) * particle_dim() +
           (with_action ? action_dim : 0);
  }
};

struct UnstructuredParams {
  std::vector<int> w, b;
  bool with_action = false;
};

template <class S>
inline UnstructuredParams build_unstructured(ParamStore<S>& store, const UnstructuredConfig& cfg,
                                             Rng& rng, bool with_action, int out_dim,
                                             const std::string& prefix = "mlp") {
  UnstructuredParams p;
  p.with_action = with_action;
  int in = cfg.input_width(with_action);
  for (int layer = 0; layer < cfg.layers; ++layer) {
    const bool last = layer == cfg.layers - 1;
    int bi = -1;
    const int w = detail::add_linear(store, prefix + "/l" + std::to_string(layer), in,
                                     last ? out_dim : cfg.hidden, rng, &bi);
    p.w.push_back(w);
    p.b.push_back(bi);
    in = last ? out_dim : cfg.hidden;
  }
  return p;
}

// Flattens an observation into the canonical fixed-width row. Throws if the
// entity count does not match the trained width (occlusion, decoys with no
// tag, or a different N all break this baseline by construction).
template <class S>
inline ad::Mat<S> unstructured_input(const Observation& obs, const UnstructuredConfig& cfg) {
  auto collect = [&](const std::vector<EntitySet>& sets, int expected_per_view) {
    std::vector<const Particle*> ordered;
    for (const auto& set : sets) {
      std::vector<const Particle*> in_view;
      for (const auto& p : set.particles)
        if (p.entity_tag >= 0) in_view.push_back(&p);
      if (static_cast<int>(in_view.size()) != expected_per_view)
        throw std::invalid_argument(
            "unstructured baseline: entity count mismatch with trained width");
      std::sort(in_view.begin(), in_view.end(),
                [](const Particle* a, const Particle* b) { return a->entity_tag < b->entity_tag; });
      ordered.insert(ordered.end(), in_view.begin(), in_view.end());
    }
    return ordered;
  };
  if (static_cast<int>(obs.state_sets.size()) != cfg.views ||
      static_cast<int>(obs.goal_sets.size()) != cfg.views)
    throw std::invalid_argument("unstructured baseline: view count mismatch");
  auto state = collect(obs.state_sets, cfg.state_entities);
  auto goal = collect(obs.goal_sets, cfg.goal_entities);
  ad::Mat<S> row(1, cfg.views * (cfg.state_entities + cfg.goal_entities) * cfg.particle_dim());
  int col = 0;
  for (const auto* p : state) {
    const Eigen::VectorXd v = p->flat();
    for (int i = 0; i < v.size(); ++i) row(0, col++) = static_cast<S>(v(i));
  }
  for (const auto* p : goal) {
    const Eigen::VectorXd v = p->flat();
    for (int i = 0; i < v.size(); ++i) row(0, col++) = static_cast<S>(v(i));
  }
  return row;
}

template <class S>
inline ad::Var unstructured_batch(ad::Tape<S>& t, const std::vector<ad::Var>& w,
                                  const UnstructuredParams& p, ad::Var input) {
  ad::Var h = input;
  for (std::size_t layer = 0; layer < p.w.size(); ++layer) {
    h = detail::linear(t, h, w, p.w[layer], p.b[layer]);
    if (layer + 1 < p.w.size()) h = t.gelu(h);
  }
  return h;
}

template <class S>
inline Eigen::Vector2d unstructured_forward(const ParamStore<S>& store,
                                            const UnstructuredParams& p,
                                            const UnstructuredConfig& cfg,
                                            const Observation& obs) {
  ad::Tape<S> t(false);
  auto w = bind_store(t, store, false);
  ad::Var h = unstructured_batch(t, w, p, t.leaf(unstructured_input<S>(obs, cfg)));
  ad::Var a = t.scale(t.tanh_op(h), static_cast<S>(cfg.a_max));
  return {static_cast<double>(t.val(a)(0, 0)), static_cast<double>(t.val(a)(0, 1))};
}

}  // namespace setrl
