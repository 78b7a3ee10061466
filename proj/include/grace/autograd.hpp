#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// Layout convention used throughout the library: feature tensors are
// (channels x items), one column per point / pixel / token.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace grace {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using SparseMatrix = Eigen::SparseMatrix<Scalar>;
using Index = Eigen::Index;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var parameter(Matrix value) { return Var(std::move(value), true); }
  static Var constant(Matrix value) { return Var(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  Scalar item() const {
    if (rows() != 1 || cols() != 1) throw std::logic_error("item() on non-scalar Var");
    return node_->value(0, 0);
  }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make_result(Matrix value, const std::vector<Var>& inputs,
                       std::function<void(Node&)> backward) {
  Var out(std::move(value));
  if (!grad_mode()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

inline void accumulate(Node& parent, const auto& g) {
  if (parent.requires_grad) parent.grad_buffer() += g;
}

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

/// Runs reverse accumulation from a scalar root.
inline void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw std::logic_error("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------
// Elementary ops

inline Var matmul(const Var& a, const Var& b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  return detail::make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer().noalias() += self.grad * pb.value.transpose();
    if (pb.requires_grad) pb.grad_buffer().noalias() += pa.value.transpose() * self.grad;
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return detail::make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return detail::make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], -self.grad);
  });
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  return detail::make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    detail::accumulate(pa, self.grad.cwiseProduct(pb.value));
    detail::accumulate(pb, self.grad.cwiseProduct(pa.value));
  });
}

inline Var scale(const Var& a, Scalar s) {
  return detail::make_result(a.value() * s, {a}, [s](Node& self) {
    detail::accumulate(*self.parents[0], self.grad * s);
  });
}

/// a (r x n) plus column vector b (r x 1) broadcast over columns.
inline Var add_bias(const Var& a, const Var& b) {
  detail::check(b.cols() == 1 && b.rows() == a.rows(), "add_bias: bias must be (rows x 1)");
  Matrix out = a.value().colwise() + b.value().col(0);
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad.rowwise().sum());
  });
}

inline Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(Scalar(0));
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.grad_buffer() += (pa.value.array() > 0).select(self.grad, Scalar(0));
  });
}

inline Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

inline Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](Scalar x) { return stable_sigmoid(x); });
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    const auto& y = self.value.array();
    detail::accumulate(*self.parents[0], (self.grad.array() * y * (1 - y)).matrix());
  });
}

inline Var transpose(const Var& a) {
  return detail::make_result(a.value().transpose(), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad.transpose());
  });
}

/// Vertical stack of inputs sharing a column count (channel concatenation).
inline Var concat_rows(const std::vector<Var>& parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    detail::check(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return detail::make_result(std::move(out), parts, [](Node& self) {
    Index off = 0;
    for (auto& parent : self.parents) {
      const Index r = parent->value.rows();
      detail::accumulate(*parent, self.grad.middleRows(off, r));
      off += r;
    }
  });
}

/// Expands an (r x 1) column to (r x n) by repetition.
inline Var repeat_cols(const Var& a, Index n) {
  detail::check(a.cols() == 1, "repeat_cols: expects a column");
  detail::check(n > 0, "repeat_cols: n must be positive");
  Matrix out = a.value().replicate(1, n);
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad.rowwise().sum());
  });
}

inline Var mean_cols(const Var& a) {
  detail::check(a.cols() > 0, "mean_cols: empty input");
  Matrix out = a.value().rowwise().mean();
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    const auto n = static_cast<Scalar>(pa.value.cols());
    detail::accumulate(pa, (self.grad / n).replicate(1, pa.value.cols()));
  });
}

/// Channelwise max over columns. Gradient routes to the first maximal column.
inline Var max_cols(const Var& a) {
  detail::check(a.cols() > 0, "max_cols: empty input");
  const Index r = a.rows();
  Matrix out(r, 1);
  std::vector<Index> arg(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    Index best = 0;
    out(i, 0) = a.value().row(i).maxCoeff(&best);
    arg[static_cast<std::size_t>(i)] = best;
  }
  return detail::make_result(std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (Index i = 0; i < g.rows(); ++i) g(i, arg[static_cast<std::size_t>(i)]) += self.grad(i, 0);
  });
}

inline Var gather_cols(const Var& a, const std::vector<Index>& index) {
  Matrix out(a.rows(), static_cast<Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    detail::check(index[j] >= 0 && index[j] < a.cols(), "gather_cols: index out of range");
    out.col(static_cast<Index>(j)) = a.value().col(index[j]);
  }
  return detail::make_result(std::move(out), {a}, [index](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (std::size_t j = 0; j < index.size(); ++j) g.col(index[j]) += self.grad.col(static_cast<Index>(j));
  });
}

/// Max over consecutive column groups of width `group`: (r x n*group) -> (r x n).
inline Var group_max(const Var& a, Index group) {
  detail::check(group > 0 && a.cols() % group == 0, "group_max: column count not divisible by group");
  const Index n = a.cols() / group;
  const Index r = a.rows();
  Matrix out(r, n);
  std::vector<Index> arg(static_cast<std::size_t>(r * n));
  for (Index c = 0; c < n; ++c) {
    for (Index i = 0; i < r; ++i) {
      Index best = c * group;
      Scalar bv = a.value()(i, best);
      for (Index k = 1; k < group; ++k) {
        const Scalar v = a.value()(i, c * group + k);
        if (v > bv) {
          bv = v;
          best = c * group + k;
        }
      }
      out(i, c) = bv;
      arg[static_cast<std::size_t>(c * r + i)] = best;
    }
  }
  return detail::make_result(std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    const Index r = self.grad.rows();
    for (Index c = 0; c < self.grad.cols(); ++c)
      for (Index i = 0; i < r; ++i) g(i, arg[static_cast<std::size_t>(c * r + i)]) += self.grad(i, c);
  });
}

/// a (r x m) times a fixed sparse operator w (m x n).
inline Var matmul_fixed(const Var& a, std::shared_ptr<const SparseMatrix> w) {
  detail::check(a.cols() == w->rows(), "matmul_fixed: dimension mismatch");
  Matrix out = a.value() * (*w);
  return detail::make_result(std::move(out), {a}, [w = std::move(w)](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    pa.grad_buffer() += self.grad * w->transpose();
  });
}

// ---------------------------------------------------------------------------
// Attention

/// Column-softmax of a score matrix: each column is a distribution over rows.
inline Matrix softmax_columns(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Index j = 0; j < scores.cols(); ++j) {
    const Scalar m = scores.col(j).maxCoeff();
    out.col(j) = (scores.col(j).array() - m).exp().matrix();
    out.col(j) /= out.col(j).sum();
  }
  return out;
}

/// Scaled dot-product attention.
///
/// q: (d x nq), k: (d x nk), v: (dv x nk). Heads split d and dv into equal
/// contiguous row blocks. Returns (dv x nq). When `weights` is non-null it
/// receives one (nk x nq) column-stochastic matrix per head.
inline Var attention(const Var& q, const Var& k, const Var& v, int heads = 1,
                     std::vector<Matrix>* weights = nullptr) {
  detail::check(q.rows() == k.rows(), "attention: query/key width mismatch");
  detail::check(k.cols() == v.cols(), "attention: key/value token mismatch");
  detail::check(k.cols() > 0, "attention: zero tokens");
  detail::check(heads > 0 && q.rows() % heads == 0 && v.rows() % heads == 0,
                "attention: head count must divide widths");
  const Index dh = q.rows() / heads;
  const Index dvh = v.rows() / heads;
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>();
  Matrix out(v.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix scores = k.value().middleRows(h * dh, dh).transpose() * q.value().middleRows(h * dh, dh);
    scores *= inv_sqrt;
    probs->push_back(softmax_columns(scores));
    out.middleRows(h * dvh, dvh).noalias() = v.value().middleRows(h * dvh, dvh) * probs->back();
  }
  if (weights) *weights = *probs;

  return detail::make_result(std::move(out), {q, k, v}, [probs, heads, dh, dvh, inv_sqrt](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = (*probs)[static_cast<std::size_t>(h)];
      const auto g = self.grad.middleRows(h * dvh, dvh);
      if (pv.requires_grad) pv.grad_buffer().middleRows(h * dvh, dvh).noalias() += g * a.transpose();
      if (!pq.requires_grad && !pk.requires_grad) continue;
      Matrix da = pv.value.middleRows(h * dvh, dvh).transpose() * g;
      const RowVector col_dot = a.cwiseProduct(da).colwise().sum();
      Matrix ds = a.cwiseProduct(da - col_dot.replicate(a.rows(), 1)) * inv_sqrt;
      if (pq.requires_grad)
        pq.grad_buffer().middleRows(h * dh, dh).noalias() += pk.value.middleRows(h * dh, dh) * ds;
      if (pk.requires_grad)
        pk.grad_buffer().middleRows(h * dh, dh).noalias() += pq.value.middleRows(h * dh, dh) * ds.transpose();
    }
  });
}

// ---------------------------------------------------------------------------
// Image ops. Images are (channels x height*width), row-major pixel order.

enum class PadMode { kZero, kCircular };

struct ConvGeometry {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;
  PadMode pad_mode = PadMode::kZero;

  Index out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  Index out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

namespace detail {

// Source pixel for a padded coordinate, or -1 when it falls in zero padding.
inline Index source_coord(Index p, Index extent, PadMode mode) {
  if (p >= 0 && p < extent) return p;
  if (mode == PadMode::kZero) return -1;
  return ((p % extent) + extent) % extent;
}

}  // namespace detail

/// Unfolds (C x H*W) into (C*k*k x Ho*Wo) patch columns.
inline Var im2col(const Var& a, const ConvGeometry& geo) {
  detail::check(a.rows() == geo.channels && a.cols() == geo.height * geo.width, "im2col: shape mismatch");
  const Index ho = geo.out_height();
  const Index wo = geo.out_width();
  detail::check(ho > 0 && wo > 0, "im2col: empty output");
  const Index kk = geo.kernel * geo.kernel;

  // Precompute the source pixel for each (patch row offset, output pixel).
  auto src = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(kk * ho * wo));
  for (Index oy = 0; oy < ho; ++oy) {
    for (Index ox = 0; ox < wo; ++ox) {
      for (Index ky = 0; ky < geo.kernel; ++ky) {
        for (Index kx = 0; kx < geo.kernel; ++kx) {
          const Index sy = detail::source_coord(oy * geo.stride - geo.pad + ky, geo.height, geo.pad_mode);
          const Index sx = detail::source_coord(ox * geo.stride - geo.pad + kx, geo.width, geo.pad_mode);
          (*src)[static_cast<std::size_t>((oy * wo + ox) * kk + ky * geo.kernel + kx)] =
              (sy < 0 || sx < 0) ? -1 : sy * geo.width + sx;
        }
      }
    }
  }

  const Index c = geo.channels;
  Matrix out = Matrix::Zero(c * kk, ho * wo);
  const Matrix& in = a.value();
  for (Index col = 0; col < ho * wo; ++col) {
    for (Index t = 0; t < kk; ++t) {
      const Index s = (*src)[static_cast<std::size_t>(col * kk + t)];
      if (s < 0) continue;
      for (Index ch = 0; ch < c; ++ch) out(ch * kk + t, col) = in(ch, s);
    }
  }
  return detail::make_result(std::move(out), {a}, [src, c, kk](Node& self) {
    Node& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (Index col = 0; col < self.grad.cols(); ++col) {
      for (Index t = 0; t < kk; ++t) {
        const Index s = (*src)[static_cast<std::size_t>(col * kk + t)];
        if (s < 0) continue;
        for (Index ch = 0; ch < c; ++ch) g(ch, s) += self.grad(ch * kk + t, col);
      }
    }
  });
}

/// Per-row normalization over columns with affine parameters. In training
/// mode statistics come from the input; otherwise `mean`/`var` are used.
inline Var batch_norm(const Var& x, const Var& gamma, const Var& beta, bool training,
                      const ColVector& running_mean, const ColVector& running_var, Scalar eps,
                      ColVector* batch_mean = nullptr, ColVector* batch_var = nullptr) {
  detail::check(gamma.rows() == x.rows() && beta.rows() == x.rows(), "batch_norm: parameter shape");
  const Index p = x.cols();
  ColVector mean, var;
  if (training) {
    mean = x.value().rowwise().mean();
    var = (x.value().colwise() - mean).array().square().rowwise().mean().matrix();
    if (batch_mean) *batch_mean = mean;
    if (batch_var) *batch_var = var;
  } else {
    mean = running_mean;
    var = running_var;
  }
  ColVector inv_std = (var.array() + eps).rsqrt().matrix();
  auto xhat = std::make_shared<Matrix>((x.value().colwise() - mean).array().colwise() * inv_std.array());
  Matrix out = (xhat->array().colwise() * gamma.value().col(0).array()).colwise() + beta.value().col(0).array();

  return detail::make_result(std::move(out), {x, gamma, beta}, [xhat, inv_std, training, p](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const auto& g = self.grad;
    if (pg.requires_grad) pg.grad_buffer() += g.cwiseProduct(*xhat).rowwise().sum();
    if (pb.requires_grad) pb.grad_buffer() += g.rowwise().sum();
    if (!px.requires_grad) return;
    Matrix dxhat = g.array().colwise() * pg.value.col(0).array();
    if (!training) {
      px.grad_buffer() += (dxhat.array().colwise() * inv_std.array()).matrix();
      return;
    }
    const ColVector sum_d = dxhat.rowwise().sum();
    const ColVector sum_dx = dxhat.cwiseProduct(*xhat).rowwise().sum();
    const auto n = static_cast<Scalar>(p);
    Matrix dx = (n * dxhat.array() - sum_d.replicate(1, p).array() -
                 xhat->array() * sum_dx.replicate(1, p).array());
    dx = (dx.array().colwise() * (inv_std.array() / n)).matrix();
    px.grad_buffer() += dx;
  });
}

}  // namespace ag
}  // namespace grace
