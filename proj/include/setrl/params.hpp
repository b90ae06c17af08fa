#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "setrl/autodiff.hpp"

namespace setrl {

// Flat store of named parameter matrices. Networks hold indices into one
// store; target networks are independent stores with identical layout.
template <class S>
struct ParamStore {
  struct Entry {
    std::string name;
    ad::Mat<S> value;
  };
  std::vector<Entry> entries;

  int add(const std::string& name, int rows, int cols) {
    entries.push_back({name, ad::Mat<S>::Zero(rows, cols)});
    return static_cast<int>(entries.size()) - 1;
  }
  ad::Mat<S>& operator[](int i) { return entries[static_cast<std::size_t>(i)].value; }
  const ad::Mat<S>& operator[](int i) const {
    return entries[static_cast<std::size_t>(i)].value;
  }
  std::size_t size() const { return entries.size(); }

  long long scalar_count() const {
    long long n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }
};

// theta_target <- tau * theta + (1 - tau) * theta_target, elementwise.
template <class S>
inline void polyak_update(ParamStore<S>& target, const ParamStore<S>& online, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("tau must be in [0,1]");
  if (target.size() != online.size()) throw std::invalid_argument("polyak: store size mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& t = target.entries[i].value;
    const auto& o = online.entries[i].value;
    if (t.rows() != o.rows() || t.cols() != o.cols())
      throw std::invalid_argument("polyak: shape mismatch at " + target.entries[i].name);
    t = S(tau) * o + S(1.0 - tau) * t;
  }
}

// Adam with bias correction; state is per-store.
template <class S>
class Adam {
 public:
  Adam(double lr = 5e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<S>& store, const std::vector<ad::Mat<S>>& grads) {
    if (grads.size() != store.size()) throw std::invalid_argument("adam: grad count mismatch");
    if (m_.empty()) {
      for (const auto& e : store.entries) {
        m_.push_back(ad::Mat<S>::Zero(e.value.rows(), e.value.cols()));
        v_.push_back(ad::Mat<S>::Zero(e.value.rows(), e.value.cols()));
      }
    }
    ++t_;
    const S c1 = S(1.0 - std::pow(beta1_, t_));
    const S c2 = S(1.0 - std::pow(beta2_, t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& g = grads[i];
      if (g.size() == 0) continue;
      m_[i] = S(beta1_) * m_[i] + S(1.0 - beta1_) * g;
      v_[i] = S(beta2_) * v_[i] + S(1.0 - beta2_) * g.cwiseProduct(g);
      store.entries[i].value.array() -=
          S(lr_) * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + S(eps_));
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<ad::Mat<S>> m_, v_;
};

// Binds every entry of a store onto a tape; forwards index the returned vars.
template <class S>
inline std::vector<ad::Var> bind_store(ad::Tape<S>& tape, const ParamStore<S>& store,
                                       bool needs_grad) {
  std::vector<ad::Var> vars;
  vars.reserve(store.size());
  for (const auto& e : store.entries) vars.push_back(tape.leaf(e.value, needs_grad));
  return vars;
}

template <class S>
inline std::vector<ad::Mat<S>> collect_grads(const ad::Tape<S>& tape,
                                             const std::vector<ad::Var>& bound) {
  std::vector<ad::Mat<S>> grads;
  grads.reserve(bound.size());
  for (auto v : bound) grads.push_back(tape.grad(v));
  return grads;
}

// ---- checkpoint format ----
// magic, format version, manifest of (name, rows, cols, dtype), then all
// payloads as little-endian float32 in manifest order.

namespace detail {

constexpr char kCkptMagic[8] = {'S', 'E', 'T', 'R', 'L', 'C', 'K', '1'};
constexpr std::uint32_t kCkptVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

template <class S>
inline void save_checkpoint(const std::string& path, const ParamStore<S>& store) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::write_pod<std::uint32_t>(os, detail::kCkptVersion);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store.entries) {
    detail::write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.rows()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(e.value.cols()));
    detail::write_pod<std::uint8_t>(os, 0);  // dtype 0 = float32
  }
  for (const auto& e : store.entries) {
    for (int i = 0; i < e.value.rows(); ++i)
      for (int j = 0; j < e.value.cols(); ++j)
        detail::write_pod<float>(os, static_cast<float>(e.value(i, j)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

// Loads into a store with identical layout (names and shapes must match).
template <class S>
inline void load_checkpoint(const std::string& path, ParamStore<S>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  const auto count = detail::read_pod<std::uint32_t>(is);
  if (count != store.size()) throw std::runtime_error("checkpoint: tensor count mismatch");
  struct Meta {
    std::string name;
    std::uint32_t rows, cols;
  };
  std::vector<Meta> metas;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::read_pod<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = detail::read_pod<std::uint32_t>(is);
    const auto cols = detail::read_pod<std::uint32_t>(is);
    const auto dtype = detail::read_pod<std::uint8_t>(is);
    if (dtype != 0) throw std::runtime_error("checkpoint: unsupported dtype");
    const auto& e = store.entries[i];
    if (e.name != name || e.value.rows() != static_cast<int>(rows) ||
        e.value.cols() != static_cast<int>(cols))
      throw std::runtime_error("checkpoint: layout mismatch at tensor " + name);
    metas.push_back({std::move(name), rows, cols});
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& m = store.entries[i].value;
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) m(r, c) = static_cast<S>(detail::read_pod<float>(is));
  }
}

}  // namespace setrl
