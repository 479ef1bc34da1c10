#pragma once

// Jets: matrices carrying values plus first and pure second directional
// derivatives per coordinate (layout in JetLayout), and the dense-network
// building blocks that act on them.

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

#include "pipn/ad/params.hpp"
#include "pipn/ad/tape.hpp"
#include "pipn/errors.hpp"

namespace pipn::ad {

template <class Scalar>
struct Jet {
  Var<Scalar> m;
  JetLayout layout;

  Eigen::Index cols() const { return m.cols(); }
  Tape<Scalar>& tape() const { return m.tape(); }
};

/// Seeds coordinates as the differentiation variables. `coords` has one row
/// per point; the first `n_deriv` rows receive derivative rows.
template <class Scalar>
Jet<Scalar> seed_coordinates(Tape<Scalar>& tape,
                             const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& coords,
                             int n_deriv) {
  const int n = static_cast<int>(coords.rows());
  const int d = static_cast<int>(coords.cols());
  if (n_deriv < 0 || n_deriv > n) throw ConfigurationError("seed_coordinates: bad derivative row count");
  JetLayout layout{n, n_deriv, d};
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(layout.rows(), d);
  m.topRows(n) = coords;
  for (int k = 0; k < d; ++k) m.block(layout.grad_row(k), k, n_deriv, 1).setOnes();
  return {tape.constant(std::move(m)), layout};
}

/// Features that do not depend on the coordinates (zero derivative rows).
template <class Scalar>
Jet<Scalar> constant_jet(Tape<Scalar>& tape,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& features,
                         const JetLayout& layout) {
  if (features.rows() != layout.n_value) throw ConfigurationError("constant_jet: row count mismatch");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(layout.rows(), features.cols());
  m.topRows(layout.n_value) = features;
  return {tape.constant(std::move(m)), layout};
}

/// x W + b; the bias only shifts value rows.
template <class Scalar>
Jet<Scalar> dense(const Jet<Scalar>& x, Var<Scalar> weight, Var<Scalar> bias) {
  auto& t = x.tape();
  Var<Scalar> y = t.matmul(x.m, weight);
  return {t.add_row(y, bias, 0, x.layout.n_value), x.layout};
}

template <class Scalar>
Jet<Scalar> activate(const Jet<Scalar>& x, Activation kind) {
  if (kind == Activation::identity) return x;
  return {x.tape().jet_activation(x.m, kind, x.layout), x.layout};
}

template <class Scalar>
Jet<Scalar> concat(const Jet<Scalar>& a, const Jet<Scalar>& b) {
  if (!(a.layout == b.layout)) throw ConfigurationError("concat: jet layouts differ");
  return {a.tape().concat_cols(a.m, b.m), a.layout};
}

/// Multiplies by a per-point, per-channel mask; derivative rows share the
/// mask of their point.
template <class Scalar>
Jet<Scalar> mask_points(const Jet<Scalar>& x, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  const JetLayout& L = x.layout;
  if (mask.rows() != L.n_value || mask.cols() != x.cols()) throw ConfigurationError("mask_points: shape mismatch");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> full(L.rows(), x.cols());
  full.topRows(L.n_value) = mask;
  for (int b = 0; b < 2 * L.dim; ++b) full.middleRows(L.n_value + b * L.n_deriv, L.n_deriv) = mask.topRows(L.n_deriv);
  return {x.tape().mul_const(x.m, std::move(full)), L};
}

/// Value rows of output column `col` for the derivative-carrying points.
template <class Scalar>
Var<Scalar> jet_value(const Jet<Scalar>& y, int col) {
  return y.tape().slice(y.m, 0, y.layout.n_deriv, col, 1);
}

/// Value rows of output column `col` for points [row0, row0 + count).
template <class Scalar>
Var<Scalar> jet_value(const Jet<Scalar>& y, int col, int row0, int count) {
  return y.tape().slice(y.m, row0, count, col, 1);
}

/// d y_col / d x_k at the derivative-carrying points.
template <class Scalar>
Var<Scalar> jet_first(const Jet<Scalar>& y, int col, int k) {
  return y.tape().slice(y.m, y.layout.grad_row(k), y.layout.n_deriv, col, 1);
}

/// d^2 y_col / d x_k^2 at the derivative-carrying points.
template <class Scalar>
Var<Scalar> jet_second(const Jet<Scalar>& y, int col, int k) {
  return y.tape().slice(y.m, y.layout.hess_row(k), y.layout.n_deriv, col, 1);
}

template <class Scalar>
Var<Scalar> jet_laplacian(const Jet<Scalar>& y, int col) {
  Var<Scalar> lap = jet_second(y, col, 0);
  for (int k = 1; k < y.layout.dim; ++k) lap = y.tape().add(lap, jet_second(y, col, k));
  return lap;
}

/// Fully connected network: hidden layers use `activation`, the last layer
/// is linear. Parameters are `<prefix>.<i>.weight` (in x out) and
/// `<prefix>.<i>.bias` (1 x out).
struct MlpShape {
  std::string prefix;
  int input_dim = 0;
  std::vector<int> widths;  // including the output layer
  Activation activation = Activation::tanh;
  bool activate_last = false;

  int output_dim() const { return widths.empty() ? input_dim : widths.back(); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    int in = input_dim;
    for (int w : widths) {
      n += static_cast<Eigen::Index>(in) * w + w;
      in = w;
    }
    return n;
  }

  std::string weight_name(std::size_t i) const { return prefix + "." + std::to_string(i) + ".weight"; }
  std::string bias_name(std::size_t i) const { return prefix + "." + std::to_string(i) + ".bias"; }
};

template <class Scalar>
class Mlp {
 public:
  Mlp(MlpShape shape, const BoundParameters<Scalar>& params) : shape_(std::move(shape)) {
    for (std::size_t i = 0; i < shape_.widths.size(); ++i) {
      weights_.push_back(params[shape_.weight_name(i)]);
      biases_.push_back(params[shape_.bias_name(i)]);
    }
  }

  int input_dim() const { return shape_.input_dim; }
  int output_dim() const { return shape_.output_dim(); }
  const MlpShape& shape() const { return shape_; }
  Var<Scalar> weight(std::size_t i) const { return weights_[i]; }
  Var<Scalar> bias(std::size_t i) const { return biases_[i]; }
  std::size_t depth() const { return weights_.size(); }

  Jet<Scalar> operator()(const Jet<Scalar>& x) const { return forward(x); }

  /// `point_masks`, when given, holds one optional mask per layer applied
  /// after that layer's activation (dropout).
  Jet<Scalar> forward(const Jet<Scalar>& x,
                      const std::vector<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>*>* point_masks =
                          nullptr) const {
    if (x.cols() != shape_.input_dim) {
      throw ConfigurationError(shape_.prefix + ": input has " + std::to_string(x.cols()) + " columns, expected " +
                               std::to_string(shape_.input_dim));
    }
    Jet<Scalar> h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = dense(h, weights_[i], biases_[i]);
      const bool last = i + 1 == weights_.size();
      if (!last || shape_.activate_last) h = activate(h, shape_.activation);
      if (point_masks && i < point_masks->size() && (*point_masks)[i]) h = mask_points(h, *(*point_masks)[i]);
    }
    return h;
  }

 private:
  MlpShape shape_;
  std::vector<Var<Scalar>> weights_;
  std::vector<Var<Scalar>> biases_;
};

/// Outputs = inputs.
template <class Scalar>
struct IdentityNet {
  int dim = 2;
  int input_dim() const { return dim; }
  Jet<Scalar> operator()(const Jet<Scalar>& x) const { return x; }
};

template <class Scalar>
struct PointDerivatives {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Var<Scalar> outputs;                // 1 x n_out
  std::vector<Var<Scalar>> jacobian;  // d entries, each 1 x n_out: row k = d/dx_k
  Var<Scalar> laplacian;              // 1 x n_out

  Matrix jacobian_matrix() const {
    Matrix j(static_cast<Eigen::Index>(jacobian.size()), outputs.cols());
    for (std::size_t k = 0; k < jacobian.size(); ++k) j.row(static_cast<Eigen::Index>(k)) = jacobian[k].value();
    return j;
  }
};

/// Outputs, spatial Jacobian and Laplacian of `net` at one point, all as tape
/// nodes so they can feed a loss whose parameter gradient is requested later.
template <class Scalar, class Net>
PointDerivatives<Scalar> laplacian_and_jacobian(Tape<Scalar>& tape, const Net& net, std::span<const Scalar> point) {
  const int d = static_cast<int>(point.size());
  if (net.input_dim() != d) {
    throw ConfigurationError("laplacian_and_jacobian: network expects " + std::to_string(net.input_dim()) +
                             " inputs, point has " + std::to_string(d));
  }
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> coords(1, d);
  for (int k = 0; k < d; ++k) coords(0, k) = point[static_cast<std::size_t>(k)];
  Jet<Scalar> y = net(seed_coordinates(tape, coords, 1));
  const int n_out = static_cast<int>(y.cols());
  PointDerivatives<Scalar> out;
  out.outputs = tape.slice(y.m, 0, 1, 0, n_out);
  for (int k = 0; k < d; ++k) out.jacobian.push_back(tape.slice(y.m, y.layout.grad_row(k), 1, 0, n_out));
  out.laplacian = tape.slice(y.m, y.layout.hess_row(0), 1, 0, n_out);
  for (int k = 1; k < d; ++k) out.laplacian = tape.add(out.laplacian, tape.slice(y.m, y.layout.hess_row(k), 1, 0, n_out));
  return out;
}

}  // namespace pipn::ad
