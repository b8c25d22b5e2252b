#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A graph is built eagerly as operations are applied; nodes whose
// inputs do not require gradients keep no parents, so purely numerical
// evaluation frees intermediates as soon as their handles go out of scope.
//
// Batched market tensors fold the batch into rows: a batch of G markets with
// t agents each is a (G*t) x d matrix whose g-th block of t rows belongs to
// market g. The block-aware operations below take the group count explicitly.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dauction::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <typename Expr>
  void accumulate(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  Node& parent(std::size_t i) { return *parents[i]; }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Matrix<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  static Var leaf(Matrix<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  static Var scalar(T value) {
    Matrix<T> m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
  }

  bool valid() const { return node_ != nullptr; }
  const Matrix<T>& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const { return node_->value(0, 0); }

  // Gradient accumulated by the last backward pass; zeros if none reached.
  Matrix<T> grad() const {
    if (node_->grad.size() == 0) return Matrix<T>::Zero(rows(), cols());
    return node_->grad;
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
Var<T> make_op(Matrix<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

// Entries [first, first + count) of a column vector viewed as a row array.
template <typename T>
auto row_of(const Matrix<T>& col, Index first, Index count) {
  return Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>>(col.data() + first, count);
}

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}

}  // namespace detail

// Runs reverse accumulation from a 1x1 root. Gradients are accumulated into
// every reachable node that requires them; call on a freshly built graph.
template <typename T>
void backward(const Var<T>& root) {
  detail::check(root.rows() == 1 && root.cols() == 1, "backward root must be 1x1");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad = Matrix<T>::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.rows(), "matmul shape mismatch");
  Matrix<T> out = a.value() * b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    if (pa.requires_grad) pa.accumulate(self.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * self.grad);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  Matrix<T> out = a.value() + b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (self.parent(i).requires_grad) self.parent(i).accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  Matrix<T> out = a.value() - b.value();
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parent(0).requires_grad) self.parent(0).accumulate(self.grad);
    if (self.parent(1).requires_grad) self.parent(1).accumulate(-self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    if (pa.requires_grad) pa.accumulate(self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(self.grad.cwiseProduct(pa.value));
  });
}

// alpha * a + beta, elementwise.
template <typename T>
Var<T> affine(const Var<T>& a, T alpha, T beta) {
  Matrix<T> out = (a.value().array() * alpha + beta).matrix();
  return detail::make_op<T>(std::move(out), {a}, [alpha](Node<T>& self) {
    self.parent(0).accumulate(self.grad * alpha);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T alpha) {
  return affine(a, alpha, T(0));
}

// Adds a 1 x cols row (or a 1x1 scalar) to every row of a.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::check(row.rows() == 1 && (row.cols() == a.cols() || row.cols() == 1),
                "add_row expects a matching row vector or scalar");
  Matrix<T> out;
  if (row.cols() == a.cols()) {
    out = a.value().rowwise() + row.value().row(0);
  } else {
    out = (a.value().array() + row.value()(0, 0)).matrix();
  }
  return detail::make_op<T>(std::move(out), {a, row}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pr = self.parent(1);
    if (pa.requires_grad) pa.accumulate(self.grad);
    if (pr.requires_grad) {
      if (pr.value.cols() == self.grad.cols()) {
        pr.accumulate(self.grad.colwise().sum());
      } else {
        Matrix<T> g(1, 1);
        g(0, 0) = self.grad.sum();
        pr.accumulate(g);
      }
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    pa.accumulate((pa.value.array() > T(0)).select(self.grad.array(), T(0)).matrix());
  });
}

template <typename T>
T softplus_value(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Smooth nonnegativity map log(1 + e^x); derivative is the logistic function.
template <typename T>
Var<T> softplus(const Var<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T x) { return softplus_value(x); });
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    pa.accumulate(
        self.grad.cwiseProduct(pa.value.unaryExpr([](T x) { return sigmoid_value(x); })));
  });
}

// Row-wise layer normalization with learned 1 x cols gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T eps = T(1e-5)) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  detail::check(gain.cols() == cols && bias.cols() == cols, "layer_norm shape mismatch");
  Matrix<T> xhat(rows, cols);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (row.array() - mean) * inv_std(r);
  }
  Matrix<T> out =
      (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
      bias.value().row(0).array();
  const bool need = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  if (!need) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(
      std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = self.parent(0);
        auto& pg = self.parent(1);
        auto& pb = self.parent(2);
        if (pg.requires_grad) pg.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
        if (pb.requires_grad) pb.accumulate(self.grad.colwise().sum());
        if (px.requires_grad) {
          const Index n = self.grad.cols();
          Matrix<T> dxhat = self.grad.array().rowwise() * pg.value.row(0).array();
          Matrix<T> dx(dxhat.rows(), n);
          for (Index r = 0; r < dxhat.rows(); ++r) {
            const T mean_d = dxhat.row(r).mean();
            const T mean_dx = dxhat.row(r).dot(xhat.row(r)) / T(n);
            dx.row(r) = (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx) *
                        inv_std(r);
          }
          px.accumulate(dx);
        }
      });
}

// ---------------------------------------------------------------------------
// Block-structured operations

// Scaled dot-product attention with `heads` heads over `groups` independent
// blocks. q is (groups*tq) x d, k and v are (groups*tk) x d, d % heads == 0.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index groups,
                 Index heads) {
  const Index d = q.cols();
  detail::check(k.cols() == d && v.cols() == d, "attention width mismatch");
  detail::check(groups > 0 && q.rows() % groups == 0 && k.rows() % groups == 0 &&
                    v.rows() == k.rows(),
                "attention group mismatch");
  detail::check(heads > 0 && d % heads == 0, "attention heads must divide width");
  const Index tq = q.rows() / groups;
  const Index tk = k.rows() / groups;
  const Index dh = d / heads;
  const T sc = T(1) / std::sqrt(T(dh));
  const bool need = q.requires_grad() || k.requires_grad() || v.requires_grad();

  Matrix<T> out(q.rows(), d);
  std::vector<Matrix<T>> probs;
  if (need) probs.reserve(static_cast<std::size_t>(groups * heads));
  Matrix<T> s(tq, tk);
  for (Index g = 0; g < groups; ++g) {
    for (Index h = 0; h < heads; ++h) {
      const auto qb = q.value().block(g * tq, h * dh, tq, dh);
      const auto kb = k.value().block(g * tk, h * dh, tk, dh);
      const auto vb = v.value().block(g * tk, h * dh, tk, dh);
      s.noalias() = (qb * kb.transpose()) * sc;
      for (Index r = 0; r < tq; ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      out.block(g * tq, h * dh, tq, dh).noalias() = s * vb;
      if (need) probs.push_back(s);
    }
  }
  if (!need) return Var<T>::constant(std::move(out));
  return detail::make_op<T>(
      std::move(out), {q, k, v},
      [probs = std::move(probs), groups, heads, tq, tk, dh, sc](Node<T>& self) {
        auto& pq = self.parent(0);
        auto& pk = self.parent(1);
        auto& pv = self.parent(2);
        Matrix<T> dq, dk, dv;
        if (pq.requires_grad) dq = Matrix<T>::Zero(pq.value.rows(), pq.value.cols());
        if (pk.requires_grad) dk = Matrix<T>::Zero(pk.value.rows(), pk.value.cols());
        if (pv.requires_grad) dv = Matrix<T>::Zero(pv.value.rows(), pv.value.cols());
        Matrix<T> dp(tq, tk);
        for (Index g = 0; g < groups; ++g) {
          for (Index h = 0; h < heads; ++h) {
            const Matrix<T>& p = probs[static_cast<std::size_t>(g * heads + h)];
            const auto go = self.grad.block(g * tq, h * dh, tq, dh);
            const auto qb = pq.value.block(g * tq, h * dh, tq, dh);
            const auto kb = pk.value.block(g * tk, h * dh, tk, dh);
            const auto vb = pv.value.block(g * tk, h * dh, tk, dh);
            if (pv.requires_grad) dv.block(g * tk, h * dh, tk, dh).noalias() += p.transpose() * go;
            if (pq.requires_grad || pk.requires_grad) {
              dp.noalias() = go * vb.transpose();
              for (Index r = 0; r < tq; ++r) {
                const T dotp = dp.row(r).dot(p.row(r));
                dp.row(r) = p.row(r).array() * (dp.row(r).array() - dotp);
              }
              if (pq.requires_grad) dq.block(g * tq, h * dh, tq, dh).noalias() += (dp * kb) * sc;
              if (pk.requires_grad)
                dk.block(g * tk, h * dh, tk, dh).noalias() += (dp.transpose() * qb) * sc;
            }
          }
        }
        if (pq.requires_grad) pq.accumulate(dq);
        if (pk.requires_grad) pk.accumulate(dk);
        if (pv.requires_grad) pv.accumulate(dv);
      });
}

// Per-block bilinear scores: for each group g, a_g * b_g^T * alpha where a is
// (groups*ta) x d and b is (groups*tb) x d. Result is (groups*ta) x tb.
template <typename T>
Var<T> block_bilinear(const Var<T>& a, const Var<T>& b, Index groups, T alpha) {
  detail::check(a.cols() == b.cols(), "block_bilinear width mismatch");
  detail::check(groups > 0 && a.rows() % groups == 0 && b.rows() % groups == 0,
                "block_bilinear group mismatch");
  const Index ta = a.rows() / groups;
  const Index tb = b.rows() / groups;
  const Index d = a.cols();
  Matrix<T> out(a.rows(), tb);
  for (Index g = 0; g < groups; ++g) {
    out.block(g * ta, 0, ta, tb).noalias() =
        (a.value().block(g * ta, 0, ta, d) * b.value().block(g * tb, 0, tb, d).transpose()) *
        alpha;
  }
  return detail::make_op<T>(std::move(out), {a, b},
                            [groups, ta, tb, d, alpha](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    Matrix<T> da, db;
    if (pa.requires_grad) da.resize(pa.value.rows(), d);
    if (pb.requires_grad) db.resize(pb.value.rows(), d);
    for (Index g = 0; g < groups; ++g) {
      const auto gs = self.grad.block(g * ta, 0, ta, tb);
      if (pa.requires_grad)
        da.block(g * ta, 0, ta, d).noalias() = (gs * pb.value.block(g * tb, 0, tb, d)) * alpha;
      if (pb.requires_grad)
        db.block(g * tb, 0, tb, d).noalias() =
            (gs.transpose() * pa.value.block(g * ta, 0, ta, d)) * alpha;
    }
    if (pa.requires_grad) pa.accumulate(da);
    if (pb.requires_grad) pb.accumulate(db);
  });
}

// Row sums as a rows x 1 column.
template <typename T>
Var<T> row_sum(const Var<T>& a) {
  Matrix<T> out = a.value().rowwise().sum();
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    pa.accumulate(self.grad.col(0).replicate(1, pa.value.cols()));
  });
}

// Column sums inside each block: a is (groups*t) x c; result (groups*c) x 1
// with entry g*c + j equal to the sum of column j over block g.
template <typename T>
Var<T> block_col_sum(const Var<T>& a, Index groups) {
  detail::check(groups > 0 && a.rows() % groups == 0, "block_col_sum group mismatch");
  const Index t = a.rows() / groups;
  const Index c = a.cols();
  Matrix<T> out(groups * c, 1);
  for (Index g = 0; g < groups; ++g) {
    out.block(g * c, 0, c, 1) = a.value().block(g * t, 0, t, c).colwise().sum().transpose();
  }
  return detail::make_op<T>(std::move(out), {a}, [groups, t, c](Node<T>& self) {
    auto& pa = self.parent(0);
    Matrix<T> da(pa.value.rows(), c);
    for (Index g = 0; g < groups; ++g) {
      da.block(g * t, 0, t, c) =
          self.grad.block(g * c, 0, c, 1).transpose().replicate(t, 1);
    }
    pa.accumulate(da);
  });
}

// Multiplies row r of a by f(r). f is rows x 1.
template <typename T>
Var<T> scale_rows(const Var<T>& a, const Var<T>& f) {
  detail::check(f.cols() == 1 && f.rows() == a.rows(), "scale_rows shape mismatch");
  Matrix<T> out = a.value().array().colwise() * f.value().col(0).array();
  return detail::make_op<T>(std::move(out), {a, f}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pf = self.parent(1);
    if (pa.requires_grad)
      pa.accumulate((self.grad.array().colwise() * pf.value.col(0).array()).matrix());
    if (pf.requires_grad)
      pf.accumulate(self.grad.cwiseProduct(pa.value).rowwise().sum());
  });
}

// Multiplies column j of block g of a by f(g*c + j). a is (groups*t) x c.
template <typename T>
Var<T> block_scale_cols(const Var<T>& a, const Var<T>& f, Index groups) {
  detail::check(groups > 0 && a.rows() % groups == 0, "block_scale_cols group mismatch");
  const Index t = a.rows() / groups;
  const Index c = a.cols();
  detail::check(f.cols() == 1 && f.rows() == groups * c, "block_scale_cols factor shape");
  Matrix<T> out(a.rows(), c);
  for (Index g = 0; g < groups; ++g) {
    out.block(g * t, 0, t, c) =
        a.value().block(g * t, 0, t, c).array().rowwise() * detail::row_of(f.value(), g * c, c);
  }
  return detail::make_op<T>(std::move(out), {a, f}, [groups, t, c](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pf = self.parent(1);
    if (pa.requires_grad) {
      Matrix<T> da(pa.value.rows(), c);
      for (Index g = 0; g < groups; ++g) {
        da.block(g * t, 0, t, c) = self.grad.block(g * t, 0, t, c).array().rowwise() *
                                   detail::row_of(pf.value, g * c, c);
      }
      pa.accumulate(da);
    }
    if (pf.requires_grad) {
      Matrix<T> df(groups * c, 1);
      for (Index g = 0; g < groups; ++g) {
        df.block(g * c, 0, c, 1) = self.grad.block(g * t, 0, t, c)
                                       .cwiseProduct(pa.value.block(g * t, 0, t, c))
                                       .colwise()
                                       .sum()
                                       .transpose();
      }
      pf.accumulate(df);
    }
  });
}

// Elementwise capacity factor: cap/sum where sum > cap, else exactly 1.
// At sum == cap the pass-through branch (factor 1, zero derivative) is used;
// a zero sum never exceeds a positive cap, so 0/0 cannot occur.
template <typename T>
Var<T> capacity_factor(const Var<T>& sum, const Var<T>& cap) {
  detail::check(sum.rows() == cap.rows() && sum.cols() == cap.cols(),
                "capacity_factor shape mismatch");
  Matrix<T> out(sum.rows(), sum.cols());
  for (Index i = 0; i < out.size(); ++i) {
    const T s = sum.value().data()[i];
    const T c = cap.value().data()[i];
    out.data()[i] = s > c ? c / s : T(1);
  }
  return detail::make_op<T>(std::move(out), {sum, cap}, [](Node<T>& self) {
    auto& ps = self.parent(0);
    auto& pc = self.parent(1);
    Matrix<T> ds = Matrix<T>::Zero(ps.value.rows(), ps.value.cols());
    Matrix<T> dc = Matrix<T>::Zero(pc.value.rows(), pc.value.cols());
    for (Index i = 0; i < ds.size(); ++i) {
      const T s = ps.value.data()[i];
      const T c = pc.value.data()[i];
      if (s > c) {
        const T g = self.grad.data()[i];
        ds.data()[i] = -g * c / (s * s);
        dc.data()[i] = g / s;
      }
    }
    if (ps.requires_grad) ps.accumulate(ds);
    if (pc.requires_grad) pc.accumulate(dc);
  });
}

// min(primary, bound) elementwise; ties resolve to `primary`.
template <typename T>
Var<T> min_prefer_first(const Var<T>& primary, const Var<T>& bound) {
  detail::check(primary.rows() == bound.rows() && primary.cols() == bound.cols(),
                "min shape mismatch");
  Matrix<T> out = primary.value().cwiseMin(bound.value());
  return detail::make_op<T>(std::move(out), {primary, bound}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    const auto take_a = (pa.value.array() <= pb.value.array());
    if (pa.requires_grad) pa.accumulate(take_a.select(self.grad.array(), T(0)).matrix());
    if (pb.requires_grad) pb.accumulate(take_a.select(T(0), self.grad.array()).matrix());
  });
}

// max(primary, bound) elementwise; ties resolve to `primary`.
template <typename T>
Var<T> max_prefer_first(const Var<T>& primary, const Var<T>& bound) {
  detail::check(primary.rows() == bound.rows() && primary.cols() == bound.cols(),
                "max shape mismatch");
  Matrix<T> out = primary.value().cwiseMax(bound.value());
  return detail::make_op<T>(std::move(out), {primary, bound}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    const auto take_a = (pa.value.array() >= pb.value.array());
    if (pa.requires_grad) pa.accumulate(take_a.select(self.grad.array(), T(0)).matrix());
    if (pb.requires_grad) pb.accumulate(take_a.select(T(0), self.grad.array()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::check(!parts.empty(), "concat_cols needs inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.block(0, off, rows, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return detail::make_op<T>(std::move(out), parts, [offsets](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      auto& p = self.parent(i);
      if (p.requires_grad)
        p.accumulate(self.grad.block(0, offsets[i], p.value.rows(), p.value.cols()));
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index first, Index count) {
  detail::check(first >= 0 && count >= 0 && first + count <= a.cols(), "slice_cols range");
  Matrix<T> out = a.value().block(0, first, a.rows(), count);
  return detail::make_op<T>(std::move(out), {a}, [first, count](Node<T>& self) {
    auto& pa = self.parent(0);
    Matrix<T> da = Matrix<T>::Zero(pa.value.rows(), pa.value.cols());
    da.block(0, first, da.rows(), count) = self.grad;
    pa.accumulate(da);
  });
}

// Row-major reinterpretation.
template <typename T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
  detail::check(rows * cols == a.rows() * a.cols(), "reshape size mismatch");
  Matrix<T> out = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    pa.accumulate(Eigen::Map<const Matrix<T>>(self.grad.data(), pa.value.rows(),
                                              pa.value.cols()));
  });
}

// Stacks `groups` copies of a vertically.
template <typename T>
Var<T> tile_rows(const Var<T>& a, Index groups) {
  detail::check(groups > 0, "tile_rows needs positive groups");
  Matrix<T> out = a.value().replicate(groups, 1);
  return detail::make_op<T>(std::move(out), {a}, [groups](Node<T>& self) {
    auto& pa = self.parent(0);
    const Index r = pa.value.rows();
    Matrix<T> da = Matrix<T>::Zero(r, pa.value.cols());
    for (Index g = 0; g < groups; ++g) da += self.grad.block(g * r, 0, r, pa.value.cols());
    pa.accumulate(da);
  });
}

// Softmax over all entries of a (treated as one vector).
template <typename T>
Var<T> softmax(const Var<T>& a) {
  const T mx = a.value().maxCoeff();
  Matrix<T> out = (a.value().array() - mx).exp().matrix();
  out /= out.sum();
  Matrix<T> probs = out;
  return detail::make_op<T>(std::move(out), {a}, [probs = std::move(probs)](Node<T>& self) {
    const T dotp = self.grad.cwiseProduct(probs).sum();
    self.parent(0).accumulate(
        (probs.array() * (self.grad.array() - dotp)).matrix());
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = self.parent(0);
    pa.accumulate(Matrix<T>::Constant(pa.value.rows(), pa.value.cols(), self.grad(0, 0)));
  });
}

// max(0, -a), elementwise.
template <typename T>
Var<T> hinge(const Var<T>& a) {
  return relu(scale(a, T(-1)));
}

}  // namespace dauction::ad
