#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pipn/ad/tape.hpp"
#include "pipn/errors.hpp"

namespace pipn::ad {

/// Ordered, named collection of parameter matrices.
template <class Scalar>
class ParameterSet {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  void add(std::string name, Matrix value) {
    if (find(name) >= 0) throw ConfigurationError("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  const Matrix& at(const std::string& name) const {
    const int i = find(name);
    if (i < 0) throw ConfigurationError("unknown parameter '" + name + "'");
    return values_[static_cast<std::size_t>(i)];
  }

  /// Total scalar count.
  Eigen::Index count() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  bool operator==(const ParameterSet& o) const {
    if (names_ != o.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i].rows() != o.values_[i].rows() || values_[i].cols() != o.values_[i].cols()) return false;
      if (values_[i] != o.values_[i]) return false;
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// Parameters registered as differentiable leaves on one tape.
template <class Scalar>
class BoundParameters {
 public:
  BoundParameters(Tape<Scalar>& tape, const ParameterSet<Scalar>& params) : params_(&params) {
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) vars_.push_back(tape.variable(params.value(i)));
  }

  Var<Scalar> operator[](const std::string& name) const {
    const int i = params_->find(name);
    if (i < 0) throw ConfigurationError("unknown parameter '" + name + "'");
    return vars_[static_cast<std::size_t>(i)];
  }

  const std::vector<Var<Scalar>>& vars() const { return vars_; }
  const ParameterSet<Scalar>& set() const { return *params_; }

 private:
  const ParameterSet<Scalar>* params_;
  std::vector<Var<Scalar>> vars_;
};

/// d(loss)/d(theta) for every parameter, in parameter order.
template <class Scalar>
class GradientVector {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  GradientVector() = default;
  GradientVector(std::vector<std::string> names, std::vector<Matrix> values)
      : names_(std::move(names)), values_(std::move(values)) {}

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Matrix& operator[](std::size_t i) const { return values_[i]; }
  Matrix& operator[](std::size_t i) { return values_[i]; }

  const Matrix& at(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return values_[i];
    }
    throw ConfigurationError("unknown parameter '" + name + "'");
  }

  /// Entries flattened in parameter order (column-major within each matrix).
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flat() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(n);
    Eigen::Index o = 0;
    for (const auto& v : values_) {
      out.segment(o, v.size()) = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(v.data(), v.size());
      o += v.size();
    }
    return out;
  }

  Scalar norm() const { return flat().norm(); }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// Reverse sweep from a scalar loss node to every bound parameter. Throws
/// NumericalError naming the first non-finite tape node if the loss is not
/// finite.
template <class Scalar>
GradientVector<Scalar> parameter_gradient(Var<Scalar> loss, const BoundParameters<Scalar>& params) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ConfigurationError("loss must be a 1x1 node");
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    const int bad = loss.tape().first_non_finite(loss.index());
    throw NumericalError("non-finite loss", "tape node " + std::to_string(bad < 0 ? loss.index() : bad));
  }
  auto grads = loss.tape().gradient(loss, params.vars());
  std::vector<std::string> names;
  names.reserve(params.set().size());
  for (std::size_t i = 0; i < params.set().size(); ++i) names.push_back(params.set().name(i));
  return GradientVector<Scalar>(std::move(names), std::move(grads));
}

}  // namespace pipn::ad
