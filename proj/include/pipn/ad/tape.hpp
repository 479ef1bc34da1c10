#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records matrix-valued operations in execution order; each node only
// references earlier nodes. Values live on the tape, so a `Var` is just a
// (tape, index) handle. Spatial derivatives are carried forward inside the
// matrices themselves using a stacked "jet" row layout (see JetLayout), which
// keeps the number of recorded nodes independent of the number of points.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "pipn/ad/matmul.hpp"
#include "pipn/ad/vmath.hpp"
#include "pipn/errors.hpp"

namespace pipn::ad {

enum class Activation : std::uint8_t { identity, tanh, silu };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::silu: return "silu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "silu" || s == "SiLU") return Activation::silu;
  throw ConfigurationError("unknown activation '" + s + "'");
}

/// Value and the first three derivatives of an activation, elementwise.
template <class Scalar>
struct ActivationDerivs {
  Scalar s0, s1, s2, s3;
};

/// Derivatives from the precomputed base quantity: tanh(x) for tanh,
/// the logistic function for silu (unused for identity).
template <class Scalar>
inline ActivationDerivs<Scalar> activation_from_base(Activation kind, Scalar x, Scalar base) {
  switch (kind) {
    case Activation::identity:
      return {x, Scalar(1), Scalar(0), Scalar(0)};
    case Activation::tanh: {
      const Scalar t = base;
      const Scalar q = Scalar(1) - t * t;
      return {t, q, Scalar(-2) * t * q, Scalar(-2) * q * (Scalar(1) - Scalar(3) * t * t)};
    }
    case Activation::silu: {
      const Scalar s = base;
      const Scalar q = s * (Scalar(1) - s);
      const Scalar a = Scalar(1) - Scalar(2) * s;
      return {x * s, s + x * q, q * (Scalar(2) + x * a), q * (a * (Scalar(3) + x * a) - Scalar(2) * x * q)};
    }
  }
  return {x, Scalar(1), Scalar(0), Scalar(0)};
}

/// Base quantities of `n` contiguous inputs.
template <class Scalar>
inline void activation_base(Activation kind, const Scalar* x, Scalar* out, std::size_t n) {
  if constexpr (std::is_same_v<Scalar, double>) {
    if (kind == Activation::tanh) return vmath::tanh(x, out, n);
    if (kind == Activation::silu) return vmath::sigmoid(x, out, n);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      if (kind == Activation::tanh) out[i] = std::tanh(x[i]);
      if (kind == Activation::silu) out[i] = Scalar(1) / (Scalar(1) + std::exp(-x[i]));
    }
  }
}

template <class Scalar>
inline ActivationDerivs<Scalar> activation_derivs(Activation kind, Scalar x) {
  Scalar base = Scalar(0);
  activation_base(kind, &x, &base, 1);
  return activation_from_base(kind, x, base);
}

/// Row layout of a jet matrix: `n_value` value rows, then for each of the
/// `dim` coordinate directions `n_deriv` first-derivative rows, then for each
/// direction `n_deriv` pure second-derivative rows. Derivative row j always
/// refers to value row j, so derivative-carrying points come first.
struct JetLayout {
  int n_value = 0;
  int n_deriv = 0;
  int dim = 0;

  int rows() const { return n_value + 2 * dim * n_deriv; }
  int grad_row(int k) const { return n_value + k * n_deriv; }
  int hess_row(int k) const { return n_value + (dim + k) * n_deriv; }
  /// Value row a jet row belongs to.
  int point_of_row(int r) const {
    return r < n_value ? r : (r - n_value) % n_deriv;
  }
  bool operator==(const JetLayout&) const = default;
};

template <class Scalar>
class Tape;

template <class Scalar>
class Var {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Var() = default;
  Var(Tape<Scalar>* tape, int index) : tape_(tape), index_(index) {}

  Tape<Scalar>& tape() const { return *tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const { return tape_->value(index_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar item() const { return value()(0, 0); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int index_ = -1;
};

template <class Scalar>
class Tape {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  enum class Op : std::uint8_t {
    leaf,
    constant,
    matmul,
    add,
    sub,
    mul,
    scale,
    add_scalar,
    sqrt,
    sum,
    add_row,
    mul_row,
    mul_const,
    gather_rows,
    scatter_rows,
    slice,
    concat_cols,
    max_pool,
    jet_activation,
  };

  static const char* op_name(Op op) {
    static constexpr const char* names[] = {
        "leaf",     "constant",     "matmul",       "add",       "sub",
        "mul",      "scale",        "add_scalar",   "sqrt",      "sum",
        "add_row",  "mul_row",      "mul_const",    "gather_rows", "scatter_rows",
        "slice",    "concat_cols",  "max_pool",     "jet_activation"};
    return names[static_cast<int>(op)];
  }

  struct Node {
    Op op = Op::leaf;
    int a = -1;
    int b = -1;
    bool needs_grad = false;
    Matrix value;
    Scalar scalar{};
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    std::vector<int> index;
    Matrix aux;
    Activation act = Activation::identity;
    JetLayout layout;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  const Matrix& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }

  /// Differentiable input (a trainable parameter or a probe variable).
  Var<Scalar> variable(Matrix value) {
    Node n;
    n.op = Op::leaf;
    n.needs_grad = true;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var<Scalar> constant(Matrix value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var<Scalar> constant_scalar(Scalar s) { return constant(Matrix::Constant(1, 1, s)); }

  Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
    check(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Node n = binary(Op::matmul, a, b);
    n.value = row_stable_matmul(a.value(), b.value());
    return push(std::move(n));
  }

  Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
    same_shape(a, b, "add");
    Node n = binary(Op::add, a, b);
    n.value = a.value() + b.value();
    return push(std::move(n));
  }

  Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
    same_shape(a, b, "sub");
    Node n = binary(Op::sub, a, b);
    n.value = a.value() - b.value();
    return push(std::move(n));
  }

  /// Elementwise product.
  Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
    same_shape(a, b, "mul");
    Node n = binary(Op::mul, a, b);
    n.value = a.value().cwiseProduct(b.value());
    return push(std::move(n));
  }

  Var<Scalar> scale(Var<Scalar> a, Scalar s) {
    Node n = unary(Op::scale, a);
    n.scalar = s;
    n.value = a.value() * s;
    return push(std::move(n));
  }

  Var<Scalar> add_scalar(Var<Scalar> a, Scalar s) {
    Node n = unary(Op::add_scalar, a);
    n.scalar = s;
    n.value = a.value().array() + s;
    return push(std::move(n));
  }

  Var<Scalar> sqrt(Var<Scalar> a) {
    if ((a.value().array() <= Scalar(0)).any()) {
      throw DomainError("sqrt of non-positive entry on tape node " + std::to_string(a.index()));
    }
    Node n = unary(Op::sqrt, a);
    n.value = a.value().array().sqrt();
    return push(std::move(n));
  }

  /// Sum of all entries, as a 1x1 matrix.
  Var<Scalar> sum(Var<Scalar> a) {
    Node n = unary(Op::sum, a);
    n.value = Matrix::Constant(1, 1, a.value().sum());
    return push(std::move(n));
  }

  Var<Scalar> mean(Var<Scalar> a) {
    const auto count = a.value().size();
    check(count > 0, "mean of empty matrix");
    return scale(sum(a), Scalar(1) / static_cast<Scalar>(count));
  }

  /// Adds the 1 x c row `r` to rows [row0, row0 + count) of `a`.
  Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> r, int row0, int count) {
    check(r.rows() == 1 && r.cols() == a.cols(), "add_row: row shape mismatch");
    check(row0 >= 0 && count >= 0 && row0 + count <= a.rows(), "add_row: row range out of bounds");
    Node n = binary(Op::add_row, a, r);
    n.i0 = row0;
    n.i1 = count;
    n.value = a.value();
    n.value.middleRows(row0, count).rowwise() += r.value().row(0);
    return push(std::move(n));
  }

  /// Multiplies every row of `a` elementwise by the 1 x c row `r`.
  Var<Scalar> mul_row(Var<Scalar> a, Var<Scalar> r) {
    check(r.rows() == 1 && r.cols() == a.cols(), "mul_row: row shape mismatch");
    Node n = binary(Op::mul_row, a, r);
    n.value = a.value().array().rowwise() * r.value().row(0).array();
    return push(std::move(n));
  }

  /// Elementwise product with a fixed matrix (masks, dropout).
  Var<Scalar> mul_const(Var<Scalar> a, Matrix c) {
    check(c.rows() == a.rows() && c.cols() == a.cols(), "mul_const: shape mismatch");
    Node n = unary(Op::mul_const, a);
    n.value = a.value().cwiseProduct(c);
    n.aux = std::move(c);
    return push(std::move(n));
  }

  Var<Scalar> gather_rows(Var<Scalar> a, std::vector<int> rows) {
    for (int r : rows) check(r >= 0 && r < a.rows(), "gather_rows: index out of range");
    Node n = unary(Op::gather_rows, a);
    n.value.resize(static_cast<Eigen::Index>(rows.size()), a.cols());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      n.value.row(static_cast<Eigen::Index>(j)) = a.value().row(rows[j]);
    }
    n.index = std::move(rows);
    return push(std::move(n));
  }

  /// Zero matrix with `total_rows` rows; row rows[j] accumulates row j of `a`.
  Var<Scalar> scatter_rows(Var<Scalar> a, std::vector<int> rows, int total_rows) {
    check(static_cast<Eigen::Index>(rows.size()) == a.rows(), "scatter_rows: index count mismatch");
    for (int r : rows) check(r >= 0 && r < total_rows, "scatter_rows: index out of range");
    Node n = unary(Op::scatter_rows, a);
    n.value = Matrix::Zero(total_rows, a.cols());
    for (std::size_t j = 0; j < rows.size(); ++j) {
      n.value.row(rows[j]) += a.value().row(static_cast<Eigen::Index>(j));
    }
    n.index = std::move(rows);
    return push(std::move(n));
  }

  Var<Scalar> slice(Var<Scalar> a, int row0, int nrows, int col0, int ncols) {
    check(row0 >= 0 && nrows >= 0 && row0 + nrows <= a.rows() && col0 >= 0 && ncols >= 0 &&
              col0 + ncols <= a.cols(),
          "slice: block out of bounds");
    Node n = unary(Op::slice, a);
    n.i0 = row0;
    n.i1 = nrows;
    n.i2 = col0;
    n.i3 = ncols;
    n.value = a.value().block(row0, col0, nrows, ncols);
    return push(std::move(n));
  }

  Var<Scalar> column(Var<Scalar> a, int c) { return slice(a, 0, static_cast<int>(a.rows()), c, 1); }

  Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b) {
    check(a.rows() == b.rows(), "concat_cols: row counts differ");
    Node n = binary(Op::concat_cols, a, b);
    n.value.resize(a.rows(), a.cols() + b.cols());
    n.value << a.value(), b.value();
    return push(std::move(n));
  }

  /// Column-wise maximum over rows [row0, row0 + count). The recorded argmax
  /// (lowest row on ties) receives the whole adjoint.
  Var<Scalar> max_pool(Var<Scalar> a, int row0, int count) {
    check(count > 0 && row0 >= 0 && row0 + count <= a.rows(), "max_pool: empty or invalid row range");
    Node n = unary(Op::max_pool, a);
    n.i0 = row0;
    n.i1 = count;
    const auto cols = a.cols();
    n.value.resize(1, cols);
    n.index.assign(static_cast<std::size_t>(cols), row0);
    const Matrix& x = a.value();
    for (Eigen::Index c = 0; c < cols; ++c) {
      int best = row0;
      for (int r = row0 + 1; r < row0 + count; ++r) {
        if (x(r, c) > x(best, c)) best = r;
      }
      n.index[static_cast<std::size_t>(c)] = best;
      n.value(0, c) = x(best, c);
    }
    return push(std::move(n));
  }

  /// Row index chosen by a max_pool node for each column.
  const std::vector<int>& argmax(Var<Scalar> pooled) const {
    const Node& n = node(pooled.index());
    check(n.op == Op::max_pool, "argmax: node is not a max_pool");
    return n.index;
  }

  /// Applies an activation to a jet matrix, propagating first and second
  /// directional derivatives: g' = s1 f', g'' = s2 f'^2 + s1 f''.
  Var<Scalar> jet_activation(Var<Scalar> a, Activation kind, const JetLayout& layout) {
    check(a.rows() == layout.rows(), "jet_activation: layout does not match rows");
    Node n = unary(Op::jet_activation, a);
    n.act = kind;
    n.layout = layout;
    const Matrix& x = a.value();
    n.value.resize(x.rows(), x.cols());
    const auto cols = x.cols();
    std::vector<Scalar> base(static_cast<std::size_t>(layout.n_value));
    for (Eigen::Index c = 0; c < cols; ++c) {
      activation_base(kind, &x(0, c), base.data(), base.size());
      for (int r = 0; r < layout.n_value; ++r) {
        const auto d = activation_from_base(kind, x(r, c), base[static_cast<std::size_t>(r)]);
        n.value(r, c) = d.s0;
        if (r < layout.n_deriv) {
          for (int k = 0; k < layout.dim; ++k) {
            const int gr = layout.grad_row(k) + r;
            const int hr = layout.hess_row(k) + r;
            const Scalar g = x(gr, c);
            n.value(gr, c) = d.s1 * g;
            n.value(hr, c) = d.s2 * g * g + d.s1 * x(hr, c);
          }
        }
      }
    }
    return push(std::move(n));
  }

  /// Adjoints of `output` (a 1x1 node) with respect to each of `wrt`.
  /// Nodes that do not influence the output get exact zeros.
  std::vector<Matrix> gradient(Var<Scalar> output, std::span<const Var<Scalar>> wrt) const {
    check(output.rows() == 1 && output.cols() == 1, "gradient: output must be a scalar node");
    const int top = output.index();
    std::vector<Matrix> adj(static_cast<std::size_t>(top + 1));
    adj[static_cast<std::size_t>(top)] = Matrix::Ones(1, 1);
    for (int i = top; i >= 0; --i) {
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      Matrix& g = adj[static_cast<std::size_t>(i)];
      if (g.size() == 0 || !n.needs_grad) continue;
      backward(n, g, adj);
    }
    std::vector<Matrix> out;
    out.reserve(wrt.size());
    for (const auto& w : wrt) {
      const auto idx = static_cast<std::size_t>(w.index());
      if (idx < adj.size() && adj[idx].size() != 0) {
        out.push_back(adj[idx]);
      } else {
        out.push_back(Matrix::Zero(w.rows(), w.cols()));
      }
    }
    return out;
  }

  /// First node (in recording order) holding a non-finite entry, or -1.
  int first_non_finite(int upto) const {
    for (int i = 0; i <= upto && i < static_cast<int>(nodes_.size()); ++i) {
      if (!nodes_[static_cast<std::size_t>(i)].value.allFinite()) return i;
    }
    return -1;
  }

  /// Re-evaluates every recorded node from the stored leaf and constant values.
  /// Used to check that recording is a pure function of its inputs.
  std::vector<Matrix> replay() const {
    Tape fresh;
    for (const Node& n : nodes_) {
      Node copy = n;
      switch (n.op) {
        case Op::leaf:
        case Op::constant:
          fresh.nodes_.push_back(std::move(copy));
          continue;
        default:
          break;
      }
      fresh.recompute(copy);
      fresh.nodes_.push_back(std::move(copy));
    }
    std::vector<Matrix> values;
    values.reserve(fresh.nodes_.size());
    for (auto& n : fresh.nodes_) values.push_back(std::move(n.value));
    return values;
  }

 private:
  static void check(bool ok, const char* msg) {
    if (!ok) throw ConfigurationError(msg);
  }

  static void same_shape(Var<Scalar> a, Var<Scalar> b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw ConfigurationError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                               std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                               std::to_string(b.cols()));
    }
  }

  Node unary(Op op, Var<Scalar> a) {
    check(a.valid() && &a.tape() == this, "operand belongs to a different tape");
    Node n;
    n.op = op;
    n.a = a.index();
    n.needs_grad = node(a.index()).needs_grad;
    return n;
  }

  Node binary(Op op, Var<Scalar> a, Var<Scalar> b) {
    check(a.valid() && b.valid() && &a.tape() == this && &b.tape() == this,
          "operand belongs to a different tape");
    Node n;
    n.op = op;
    n.a = a.index();
    n.b = b.index();
    n.needs_grad = node(a.index()).needs_grad || node(b.index()).needs_grad;
    return n;
  }

  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  // Recomputes `n.value` from its operands already stored in this tape.
  void recompute(Node& n) {
    const Matrix& x = value(n.a);
    switch (n.op) {
      case Op::matmul: n.value = row_stable_matmul(x, value(n.b)); break;
      case Op::add: n.value = x + value(n.b); break;
      case Op::sub: n.value = x - value(n.b); break;
      case Op::mul: n.value = x.cwiseProduct(value(n.b)); break;
      case Op::scale: n.value = x * n.scalar; break;
      case Op::add_scalar: n.value = x.array() + n.scalar; break;
      case Op::sqrt: n.value = x.array().sqrt(); break;
      case Op::sum: n.value = Matrix::Constant(1, 1, x.sum()); break;
      case Op::add_row:
        n.value = x;
        n.value.middleRows(n.i0, n.i1).rowwise() += value(n.b).row(0);
        break;
      case Op::mul_row: n.value = x.array().rowwise() * value(n.b).row(0).array(); break;
      case Op::mul_const: n.value = x.cwiseProduct(n.aux); break;
      case Op::gather_rows:
        for (std::size_t j = 0; j < n.index.size(); ++j) {
          n.value.row(static_cast<Eigen::Index>(j)) = x.row(n.index[j]);
        }
        break;
      case Op::scatter_rows:
        n.value.setZero();
        for (std::size_t j = 0; j < n.index.size(); ++j) {
          n.value.row(n.index[j]) += x.row(static_cast<Eigen::Index>(j));
        }
        break;
      case Op::slice: n.value = x.block(n.i0, n.i2, n.i1, n.i3); break;
      case Op::concat_cols: n.value << x, value(n.b); break;
      case Op::max_pool:
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
          int best = n.i0;
          for (int r = n.i0 + 1; r < n.i0 + n.i1; ++r) {
            if (x(r, c) > x(best, c)) best = r;
          }
          n.index[static_cast<std::size_t>(c)] = best;
          n.value(0, c) = x(best, c);
        }
        break;
      case Op::jet_activation: {
        Tape scratch;
        Var<Scalar> in = scratch.constant(x);
        n.value = scratch.jet_activation(in, n.act, n.layout).value();
        break;
      }
      case Op::leaf:
      case Op::constant:
        break;
    }
  }

  void accumulate(std::vector<Matrix>& adj, int i, const Matrix& g) const {
    if (!nodes_[static_cast<std::size_t>(i)].needs_grad) return;
    Matrix& dst = adj[static_cast<std::size_t>(i)];
    if (dst.size() == 0) {
      dst = g;
    } else {
      dst += g;
    }
  }

  template <class Fn>
  void accumulate_with(std::vector<Matrix>& adj, int i, Fn&& fill) const {
    const Node& target = nodes_[static_cast<std::size_t>(i)];
    if (!target.needs_grad) return;
    Matrix& dst = adj[static_cast<std::size_t>(i)];
    if (dst.size() == 0) dst = Matrix::Zero(target.value.rows(), target.value.cols());
    fill(dst);
  }

  void backward(const Node& n, const Matrix& g, std::vector<Matrix>& adj) const {
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        return;
      case Op::matmul:
        if (node(n.a).needs_grad) accumulate(adj, n.a, g * value(n.b).transpose());
        if (node(n.b).needs_grad) accumulate(adj, n.b, value(n.a).transpose() * g);
        return;
      case Op::add:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g);
        return;
      case Op::sub:
        accumulate(adj, n.a, g);
        if (node(n.b).needs_grad) accumulate(adj, n.b, -g);
        return;
      case Op::mul:
        if (node(n.a).needs_grad) accumulate(adj, n.a, g.cwiseProduct(value(n.b)));
        if (node(n.b).needs_grad) accumulate(adj, n.b, g.cwiseProduct(value(n.a)));
        return;
      case Op::scale:
        accumulate(adj, n.a, g * n.scalar);
        return;
      case Op::add_scalar:
        accumulate(adj, n.a, g);
        return;
      case Op::sqrt:
        accumulate(adj, n.a, (g.array() * Scalar(0.5) / n.value.array()).matrix());
        return;
      case Op::sum:
        accumulate(adj, n.a, Matrix::Constant(value(n.a).rows(), value(n.a).cols(), g(0, 0)));
        return;
      case Op::add_row:
        accumulate(adj, n.a, g);
        if (node(n.b).needs_grad) accumulate(adj, n.b, g.middleRows(n.i0, n.i1).colwise().sum());
        return;
      case Op::mul_row:
        if (node(n.a).needs_grad) {
          accumulate(adj, n.a, (g.array().rowwise() * value(n.b).row(0).array()).matrix());
        }
        if (node(n.b).needs_grad) accumulate(adj, n.b, g.cwiseProduct(value(n.a)).colwise().sum());
        return;
      case Op::mul_const:
        accumulate(adj, n.a, g.cwiseProduct(n.aux));
        return;
      case Op::gather_rows:
        accumulate_with(adj, n.a, [&](Matrix& dst) {
          for (std::size_t j = 0; j < n.index.size(); ++j) {
            dst.row(n.index[j]) += g.row(static_cast<Eigen::Index>(j));
          }
        });
        return;
      case Op::scatter_rows:
        accumulate_with(adj, n.a, [&](Matrix& dst) {
          for (std::size_t j = 0; j < n.index.size(); ++j) {
            dst.row(static_cast<Eigen::Index>(j)) += g.row(n.index[j]);
          }
        });
        return;
      case Op::slice:
        accumulate_with(adj, n.a, [&](Matrix& dst) { dst.block(n.i0, n.i2, n.i1, n.i3) += g; });
        return;
      case Op::concat_cols: {
        const auto ca = value(n.a).cols();
        if (node(n.a).needs_grad) accumulate(adj, n.a, g.leftCols(ca));
        if (node(n.b).needs_grad) accumulate(adj, n.b, g.rightCols(g.cols() - ca));
        return;
      }
      case Op::max_pool:
        accumulate_with(adj, n.a, [&](Matrix& dst) {
          for (Eigen::Index c = 0; c < g.cols(); ++c) dst(n.index[static_cast<std::size_t>(c)], c) += g(0, c);
        });
        return;
      case Op::jet_activation:
        accumulate(adj, n.a, jet_activation_backward(n, g));
        return;
    }
  }

  Matrix jet_activation_backward(const Node& n, const Matrix& g) const {
    const Matrix& x = value(n.a);
    const JetLayout& L = n.layout;
    Matrix dx(x.rows(), x.cols());
    std::vector<Scalar> base(static_cast<std::size_t>(L.n_value));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      activation_base(n.act, &x(0, c), base.data(), base.size());
      for (int r = 0; r < L.n_value; ++r) {
        const auto d = activation_from_base(n.act, x(r, c), base[static_cast<std::size_t>(r)]);
        Scalar dv = g(r, c) * d.s1;
        if (r < L.n_deriv) {
          for (int k = 0; k < L.dim; ++k) {
            const int gr = L.grad_row(k) + r;
            const int hr = L.hess_row(k) + r;
            const Scalar gk = x(gr, c);
            const Scalar hk = x(hr, c);
            const Scalar ag = g(gr, c);
            const Scalar ah = g(hr, c);
            dv += ag * d.s2 * gk + ah * (d.s3 * gk * gk + d.s2 * hk);
            dx(gr, c) = ag * d.s1 + Scalar(2) * ah * d.s2 * gk;
            dx(hr, c) = ah * d.s1;
          }
        }
        dx(r, c) = dv;
      }
    }
    return dx;
  }

  std::vector<Node> nodes_;
};

// Operator sugar so that generic residual code can run on tape columns.
template <class Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return a.tape().add(a, b); }
template <class Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return a.tape().sub(a, b); }
template <class Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return a.tape().mul(a, b); }
template <class Scalar>
Var<Scalar> operator-(Var<Scalar> a) { return a.tape().scale(a, Scalar(-1)); }
template <class Scalar>
Var<Scalar> operator*(Var<Scalar> a, Scalar s) { return a.tape().scale(a, s); }
template <class Scalar>
Var<Scalar> operator*(Scalar s, Var<Scalar> a) { return a.tape().scale(a, s); }
template <class Scalar>
Var<Scalar> operator/(Var<Scalar> a, Scalar s) { return a.tape().scale(a, Scalar(1) / s); }
template <class Scalar>
Var<Scalar> operator+(Var<Scalar> a, Scalar s) { return a.tape().add_scalar(a, s); }
template <class Scalar>
Var<Scalar> operator+(Scalar s, Var<Scalar> a) { return a.tape().add_scalar(a, s); }
template <class Scalar>
Var<Scalar> operator-(Var<Scalar> a, Scalar s) { return a.tape().add_scalar(a, -s); }
template <class Scalar>
Var<Scalar> sqrt(Var<Scalar> a) { return a.tape().sqrt(a); }

}  // namespace pipn::ad
