#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

// Minimal reverse-mode automatic differentiation over matrix-valued nodes.
// A Tape owns the computation graph; ops append nodes in topological order,
// so backward() is a single reverse sweep. Attention, layer norm and the
// row-assembly ops are fused nodes to keep graph size independent of batch
// and set sizes.

namespace setrl::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Segmented batch description for attention: sample b's query rows are
// [x_off[b], x_off[b+1]) and its key/value rows are [y_off[b], y_off[b+1]).
// y_attend flags rows that may be attended to; excluded rows receive an
// attention weight of exactly zero.
struct AttnSpec {
  int heads = 1;
  std::vector<int> x_off;
  std::vector<int> y_off;
  std::vector<std::uint8_t> y_attend;  // one flag per key row
};

template <class S>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var leaf(Mat<S> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad && record_, nullptr);
  }

  const Mat<S>& val(Var v) const { return nodes_[check(v)].value; }

  // Gradient of the last backward() root w.r.t. v; zero matrix if untouched.
  Mat<S> grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root) {
    Node& r = nodes_[check(root)];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw std::invalid_argument("backward: root must be a 1x1 scalar");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    r.grad = Mat<S>::Constant(1, 1, S(1));
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.back && n.grad.size() != 0) {
        cur_back_ = id;
        n.back(*this);
      }
    }
  }

  // ---- primitive ops ----

  Var matmul(Var a, Var b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul: shape mismatch");
    Mat<S> c(A.rows(), B.cols());
    c.noalias() = A * B;
    return push(std::move(c), needs(a) || needs(b), [a, b](Tape& t) {
      const Mat<S>& g = t.out_grad();
      if (t.needs(a)) t.grad_ref(a).noalias() += g * t.val(b).transpose();
      if (t.needs(b)) t.grad_ref(b).noalias() += t.val(a).transpose() * g;
    });
  }

  Var add(Var a, Var b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("add: shape mismatch");
    Mat<S> c = val(a) + val(b);
    return push(std::move(c), needs(a) || needs(b), [a, b](Tape& t) {
      if (t.needs(a)) t.grad_ref(a) += t.out_grad();
      if (t.needs(b)) t.grad_ref(b) += t.out_grad();
    });
  }

  Var sub(Var a, Var b) {
    Mat<S> c = val(a) - val(b);
    return push(std::move(c), needs(a) || needs(b), [a, b](Tape& t) {
      if (t.needs(a)) t.grad_ref(a) += t.out_grad();
      if (t.needs(b)) t.grad_ref(b) -= t.out_grad();
    });
  }

  Var hadamard(Var a, Var b) {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument("hadamard: shape mismatch");
    Mat<S> c = val(a).cwiseProduct(val(b));
    return push(std::move(c), needs(a) || needs(b), [a, b](Tape& t) {
      const Mat<S>& g = t.out_grad();
      if (t.needs(a)) t.grad_ref(a) += g.cwiseProduct(t.val(b));
      if (t.needs(b)) t.grad_ref(b) += g.cwiseProduct(t.val(a));
    });
  }

  Var scale(Var a, S c) {
    Mat<S> v = val(a) * c;
    return push(std::move(v), needs(a), [a, c](Tape& t) {
      if (t.needs(a)) t.grad_ref(a) += c * t.out_grad();
    });
  }

  // C = A with row vector r (1 x cols) added to every row.
  Var add_rowvec(Var a, Var r) {
    if (val(r).rows() != 1 || val(r).cols() != val(a).cols())
      throw std::invalid_argument("add_rowvec: r must be 1 x cols(a)");
    Mat<S> c = val(a).rowwise() + val(r).row(0);
    return push(std::move(c), needs(a) || needs(r), [a, r](Tape& t) {
      const Mat<S>& g = t.out_grad();
      if (t.needs(a)) t.grad_ref(a) += g;
      if (t.needs(r)) t.grad_ref(r).row(0) += g.colwise().sum();
    });
  }

  // C = A; C.row(i) += table.row(ids[i]) where ids[i] >= 0 (negative skips).
  Var add_gather_rows(Var a, Var table, std::vector<int> ids) {
    const Mat<S>& A = val(a);
    if (static_cast<int>(ids.size()) != A.rows())
      throw std::invalid_argument("add_gather_rows: ids size mismatch");
    Mat<S> c = A;
    const Mat<S>& T = val(table);
    for (int i = 0; i < A.rows(); ++i)
      if (ids[i] >= 0) c.row(i) += T.row(ids[i]);
    auto sh = std::make_shared<std::vector<int>>(std::move(ids));
    return push(std::move(c), needs(a) || needs(table), [a, table, sh](Tape& t) {
      const Mat<S>& g = t.out_grad();
      if (t.needs(a)) t.grad_ref(a) += g;
      if (t.needs(table)) {
        Mat<S>& gt = t.grad_ref(table);
        for (int i = 0; i < g.rows(); ++i)
          if ((*sh)[i] >= 0) gt.row((*sh)[i]) += g.row(i);
      }
    });
  }

  // Assemble a (total_rows x cols) matrix from row blocks of several sources.
  // Each target row must be written exactly once.
  Var assemble_rows(int total_rows, int cols,
                    std::vector<std::pair<Var, std::vector<int>>> parts) {
    Mat<S> c = Mat<S>::Zero(total_rows, cols);
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(total_rows), 0);
    bool any_grad = false;
    for (auto& [v, rows] : parts) {
      const Mat<S>& src = val(v);
      if (static_cast<int>(rows.size()) != src.rows() || src.cols() != cols)
        throw std::invalid_argument("assemble_rows: part shape mismatch");
      for (int i = 0; i < src.rows(); ++i) {
        if (seen[rows[i]]) throw std::invalid_argument("assemble_rows: duplicate target row");
        seen[rows[i]] = 1;
        c.row(rows[i]) = src.row(i);
      }
      any_grad = any_grad || needs(v);
    }
    for (auto f : seen)
      if (!f) throw std::invalid_argument("assemble_rows: unset target row");
    auto sh = std::make_shared<std::vector<std::pair<Var, std::vector<int>>>>(std::move(parts));
    return push(std::move(c), any_grad, [sh](Tape& t) {
      const Mat<S>& g = t.out_grad();
      for (auto& [v, rows] : *sh) {
        if (!t.needs(v)) continue;
        Mat<S>& gv = t.grad_ref(v);
        for (int i = 0; i < gv.rows(); ++i) gv.row(i) += g.row(rows[i]);
      }
    });
  }

  Var concat_cols(Var a, Var b) {
    const Mat<S>&A = val(a), &B = val(b);
    if (A.rows() != B.rows()) throw std::invalid_argument("concat_cols: row mismatch");
    Mat<S> c(A.rows(), A.cols() + B.cols());
    c << A, B;
    const int ca = static_cast<int>(A.cols());
    return push(std::move(c), needs(a) || needs(b), [a, b, ca](Tape& t) {
      const Mat<S>& g = t.out_grad();
      if (t.needs(a)) t.grad_ref(a) += g.leftCols(ca);
      if (t.needs(b)) t.grad_ref(b) += g.rightCols(g.cols() - ca);
    });
  }

  // Repeat a 1 x d row n times.
  Var repeat_row(Var a, int n) {
    if (val(a).rows() != 1) throw std::invalid_argument("repeat_row: input must be 1 x d");
    Mat<S> c = val(a).replicate(n, 1);
    return push(std::move(c), needs(a), [a](Tape& t) {
      if (t.needs(a)) t.grad_ref(a).row(0) += t.out_grad().colwise().sum();
    });
  }

  // Row-wise layer normalization with gain/offset (both 1 x d).
  Var layer_norm(Var a, Var gain, Var offset, S eps = S(1e-5)) {
    const Mat<S>& A = val(a);
    const int n = static_cast<int>(A.rows()), d = static_cast<int>(A.cols());
    auto xhat = std::make_shared<Mat<S>>(n, d);
    auto inv_std = std::make_shared<Mat<S>>(n, 1);
    Mat<S> c(n, d);
    for (int i = 0; i < n; ++i) {
      const S mu = A.row(i).mean();
      const S var = (A.row(i).array() - mu).square().sum() / S(d);
      const S is = S(1) / std::sqrt(var + eps);
      (*inv_std)(i, 0) = is;
      xhat->row(i) = (A.row(i).array() - mu) * is;
      c.row(i) = xhat->row(i).cwiseProduct(val(gain).row(0)) + val(offset).row(0);
    }
    return push(std::move(c), needs(a) || needs(gain) || needs(offset),
                [a, gain, offset, xhat, inv_std](Tape& t) {
      const Mat<S>& g = t.out_grad();
      const int n = static_cast<int>(g.rows()), d = static_cast<int>(g.cols());
      if (t.needs(gain)) t.grad_ref(gain).row(0) += (g.array() * xhat->array()).colwise().sum().matrix();
      if (t.needs(offset)) t.grad_ref(offset).row(0) += g.colwise().sum();
      if (t.needs(a)) {
        Mat<S>& ga = t.grad_ref(a);
        for (int i = 0; i < n; ++i) {
          Eigen::Matrix<S, 1, Eigen::Dynamic> dxhat =
              g.row(i).cwiseProduct(t.val(gain).row(0));
          const S m1 = dxhat.mean();
          const S m2 = dxhat.cwiseProduct(xhat->row(i)).mean();
          ga.row(i) +=
              ((dxhat.array() - m1 - xhat->row(i).array() * m2) * (*inv_std)(i, 0)).matrix();
        }
      }
      (void)d;
    });
  }

  Var gelu(Var a) {
    const Mat<S>& A = val(a);
    Mat<S> c = A.unaryExpr([](S x) {
      return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
    });
    return push(std::move(c), needs(a), [a](Tape& t) {
      if (!t.needs(a)) return;
      const Mat<S>& A = t.val(a);
      const Mat<S>& g = t.out_grad();
      constexpr double inv_sqrt2pi = 0.3989422804014327;
      t.grad_ref(a) += g.cwiseProduct(A.unaryExpr([&](S x) {
        const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
        const S pdf = S(inv_sqrt2pi) * std::exp(S(-0.5) * x * x);
        return cdf + x * pdf;
      }));
    });
  }

  Var tanh_op(Var a) {
    Mat<S> c = val(a).array().tanh().matrix();
    auto y = std::make_shared<Mat<S>>(c);
    return push(std::move(c), needs(a), [a, y](Tape& t) {
      if (t.needs(a))
        t.grad_ref(a) += t.out_grad().cwiseProduct(
            (S(1) - y->array().square()).matrix());
    });
  }

  // Multi-head scaled dot-product attention over ragged per-sample segments.
  // q: (Xrows x d) queries, k/v: (Yrows x d). Masked key rows get exactly
  // zero weight; a sample whose keys are all masked is an error.
  Var masked_attention(Var q, Var k, Var v, const AttnSpec& spec) {
    const Mat<S>&Q = val(q), &K = val(k), &V = val(v);
    const int d = static_cast<int>(Q.cols());
    const int h = spec.heads;
    if (d % h != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    if (K.cols() != d || V.cols() != d) throw std::invalid_argument("attention: dim mismatch");
    if (static_cast<int>(spec.y_attend.size()) != K.rows())
      throw std::invalid_argument("attention: mask size mismatch");
    const int dh = d / h;
    const S inv_sqrt = S(1) / std::sqrt(S(dh));
    const int B = static_cast<int>(spec.x_off.size()) - 1;
    Mat<S> z = Mat<S>::Zero(Q.rows(), d);
    auto weights = std::make_shared<std::vector<Mat<S>>>();
    weights->reserve(static_cast<std::size_t>(B) * h);
    for (int b = 0; b < B; ++b) {
      const int xo = spec.x_off[b], nx = spec.x_off[b + 1] - xo;
      const int yo = spec.y_off[b], ny = spec.y_off[b + 1] - yo;
      bool any_key = false;
      for (int j = 0; j < ny; ++j) any_key = any_key || spec.y_attend[yo + j];
      if (nx > 0 && !any_key)
        throw std::runtime_error("attention: sample has no attendable entity");
      for (int hh = 0; hh < h; ++hh) {
        Mat<S> scores(nx, ny);
        scores.noalias() =
            Q.block(xo, hh * dh, nx, dh) * K.block(yo, hh * dh, ny, dh).transpose();
        scores *= inv_sqrt;
        Mat<S> A = Mat<S>::Zero(nx, ny);
        for (int i = 0; i < nx; ++i) {
          S mx = -std::numeric_limits<S>::infinity();
          for (int j = 0; j < ny; ++j)
            if (spec.y_attend[yo + j]) mx = std::max(mx, scores(i, j));
          S sum = S(0);
          for (int j = 0; j < ny; ++j)
            if (spec.y_attend[yo + j]) {
              A(i, j) = std::exp(scores(i, j) - mx);
              sum += A(i, j);
            }
          A.row(i) /= sum;
        }
        z.block(xo, hh * dh, nx, dh).noalias() = A * V.block(yo, hh * dh, ny, dh);
        weights->push_back(std::move(A));
      }
    }
    AttnSpec sp = spec;
    auto shs = std::make_shared<AttnSpec>(std::move(sp));
    return push(std::move(z), needs(q) || needs(k) || needs(v),
                [q, k, v, shs, weights, inv_sqrt, h, dh](Tape& t) {
      const Mat<S>& g = t.out_grad();
      const int B = static_cast<int>(shs->x_off.size()) - 1;
      for (int b = 0; b < B; ++b) {
        const int xo = shs->x_off[b], nx = shs->x_off[b + 1] - xo;
        const int yo = shs->y_off[b], ny = shs->y_off[b + 1] - yo;
        for (int hh = 0; hh < h; ++hh) {
          const Mat<S>& A = (*weights)[static_cast<std::size_t>(b) * h + hh];
          Mat<S> dZ = g.block(xo, hh * dh, nx, dh);
          if (t.needs(v))
            t.grad_ref(v).block(yo, hh * dh, ny, dh).noalias() += A.transpose() * dZ;
          if (t.needs(q) || t.needs(k)) {
            Mat<S> dA(nx, ny);
            dA.noalias() = dZ * t.val(v).block(yo, hh * dh, ny, dh).transpose();
            // softmax backward; masked entries have A == 0 so they vanish
            Mat<S> dS(nx, ny);
            for (int i = 0; i < nx; ++i) {
              const S dot = dA.row(i).cwiseProduct(A.row(i)).sum();
              dS.row(i) = (A.row(i).array() * (dA.row(i).array() - dot)).matrix();
            }
            dS *= inv_sqrt;
            if (t.needs(q))
              t.grad_ref(q).block(xo, hh * dh, nx, dh).noalias() +=
                  dS * t.val(k).block(yo, hh * dh, ny, dh);
            if (t.needs(k))
              t.grad_ref(k).block(yo, hh * dh, ny, dh).noalias() +=
                  dS.transpose() * t.val(q).block(xo, hh * dh, nx, dh);
          }
        }
      }
    });
  }

  Var mean_all(Var a) {
    const S m = val(a).mean();
    const S inv = S(1) / S(val(a).size());
    return push(Mat<S>::Constant(1, 1, m), needs(a), [a, inv](Tape& t) {
      if (t.needs(a))
        t.grad_ref(a).array() += t.out_grad()(0, 0) * inv;
    });
  }

  // Mean squared error of an (n x 1) column against a constant target.
  Var mse_vs_const(Var a, const Mat<S>& target) {
    const Mat<S>& A = val(a);
    if (A.cols() != 1 || target.rows() != A.rows() || target.cols() != 1)
      throw std::invalid_argument("mse_vs_const: expects matching n x 1 shapes");
    Mat<S> diff = A - target;
    const S m = diff.array().square().mean();
    auto dsh = std::make_shared<Mat<S>>(std::move(diff));
    const S inv = S(2) / S(A.rows());
    return push(Mat<S>::Constant(1, 1, m), needs(a), [a, dsh, inv](Tape& t) {
      if (t.needs(a)) t.grad_ref(a) += (inv * t.out_grad()(0, 0)) * (*dsh);
    });
  }

  bool needs(Var v) const { return nodes_[check(v)].needs_grad; }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw std::out_of_range("invalid tape var");
    return v.id;
  }

  Var push(Mat<S> value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (record_ && needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    cur_ = static_cast<int>(nodes_.size()) - 1;
    return Var{cur_};
  }

  Mat<S>& grad_ref(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // gradient of the node whose closure is currently executing
  const Mat<S>& out_grad() const { return nodes_[cur_back_].grad; }

  std::vector<Node> nodes_;
  bool record_;
  int cur_ = -1;
  int cur_back_ = -1;
};

}  // namespace setrl::ad
