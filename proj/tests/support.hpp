#pragma once

// Test-only oracles. Nothing here goes through the tape.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pipn/ad/jet.hpp"

namespace pipn::testing {

using Matrix = Eigen::MatrixXd;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

inline ad::ParameterSet<double> random_mlp_params(const ad::MlpShape& shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  ad::ParameterSet<double> ps;
  int in = shape.input_dim;
  for (std::size_t i = 0; i < shape.widths.size(); ++i) {
    const int w = shape.widths[i];
    Matrix W(in, w), b(1, w);
    for (int r = 0; r < in; ++r)
      for (int c = 0; c < w; ++c) W(r, c) = scale * n(rng) / std::sqrt(double(in));
    for (int c = 0; c < w; ++c) b(0, c) = 0.3 * n(rng);
    ps.add(shape.weight_name(i), W);
    ps.add(shape.bias_name(i), b);
    in = w;
  }
  return ps;
}

inline double act_plain(ad::Activation a, double x) {
  switch (a) {
    case ad::Activation::tanh: return std::tanh(x);
    case ad::Activation::silu: return x / (1.0 + std::exp(-x));
    default: return x;
  }
}

/// Direct evaluation of an MLP for one input row.
inline Eigen::RowVectorXd mlp_plain(const ad::MlpShape& shape, const ad::ParameterSet<double>& ps,
                                    Eigen::RowVectorXd x) {
  for (std::size_t i = 0; i < shape.widths.size(); ++i) {
    x = x * ps.at(shape.weight_name(i)) + ps.at(shape.bias_name(i));
    if (i + 1 < shape.widths.size() || shape.activate_last) {
      for (auto& v : x) v = act_plain(shape.activation, v);
    }
  }
  return x;
}

/// Central differences of a vector function along coordinate k.
struct FdSpatial {
  Eigen::RowVectorXd first;
  Eigen::RowVectorXd second;
};

inline FdSpatial fd_spatial(const std::function<Eigen::RowVectorXd(const Eigen::RowVectorXd&)>& f,
                            const Eigen::RowVectorXd& x, int k, double h1 = 1e-5, double h2 = 1e-3) {
  auto shifted = [&](double t) {
    Eigen::RowVectorXd p = x;
    p(k) += t;
    return f(p);
  };
  FdSpatial out;
  out.first = (shifted(h1) - shifted(-h1)) / (2 * h1);
  // Fourth-order stencil keeps truncation error well under the tolerance.
  out.second = (-shifted(2 * h2) + 16 * shifted(h2) - 30 * f(x) + 16 * shifted(-h2) - shifted(-2 * h2)) /
               (12 * h2 * h2);
  return out;
}

}  // namespace pipn::testing

#include "pipn/ad/dual.hpp"
#include "pipn/physics/equations.hpp"

namespace pipn::testing {

/// Flow jet of a field given as F(span<const Dual2<double>>) -> {u_0..u_{d-1}, p},
/// differentiated with one second-order forward pass per axis.
template <class F>
physics::FlowJet<double> flow_jet_by_ad(F&& field, const std::vector<double>& x) {
  const int d = static_cast<int>(x.size());
  physics::FlowJet<double> j;
  j.u.assign(d, 0.0);
  j.du.assign(d, std::vector<double>(d, 0.0));
  j.d2u.assign(d, std::vector<double>(d, 0.0));
  j.dp.assign(d, 0.0);
  for (int k = 0; k < d; ++k) {
    std::vector<double> v(d, 0.0);
    v[k] = 1.0;
    auto r = ad::directional_derivatives(field, std::span<const double>(x), std::span<const double>(v));
    for (int i = 0; i < d; ++i) {
      j.u[i] = r[i].value;
      j.du[i][k] = r[i].d1;
      j.d2u[i][k] = r[i].d2;
    }
    j.p = r[d].value;
    j.dp[k] = r[d].d1;
  }
  return j;
}

/// Halton sequence value (radical inverse) for quasi-random sampling.
inline double halton(int index, int base) {
  double f = 1.0, r = 0.0;
  for (int i = index; i > 0; i /= base) {
    f /= base;
    r += f * (i % base);
  }
  return r;
}

inline double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace pipn::testing

#include <filesystem>
#include <unistd.h>

namespace pipn::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pipn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace pipn::testing
