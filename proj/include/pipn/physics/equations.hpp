#pragma once

// Steady incompressible Navier-Stokes with a Darcy-Forchheimer drag term
// switched on by the porous-region indicator chi.
//
// Residual functions are templates over the value type so the same code runs
// on plain doubles, on Dual2 numbers and on tape columns (one row per point).

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "pipn/ad/tape.hpp"
#include "pipn/errors.hpp"

namespace pipn::physics {

struct FluidProperties {
  double rho = 1.0;  // kg/m^3
  double mu = 1.0;   // Pa s

  void validate() const {
    if (!(rho > 0.0) || !(mu > 0.0)) throw DomainError("fluid properties need rho > 0 and mu > 0");
  }

  bool operator==(const FluidProperties&) const = default;
};

struct PorousCoefficients {
  double D = 0.0;  // Darcy, 1/m^2
  double F = 0.0;  // Forchheimer, 1/m

  void validate() const {
    if (!(D >= 0.0) || !(F >= 0.0)) throw DomainError("porous coefficients must be non-negative");
  }

  bool operator==(const PorousCoefficients&) const = default;
};

/// Packed-sphere correlation: D = 180 (1-phi)^2 / (d^2 phi^3),
/// F = 1.8 (1-phi) / (d phi^3).
inline PorousCoefficients darcy_forchheimer_from_porosity(double phi, double particle_diameter) {
  if (!(phi > 0.0) || phi > 1.0) throw DomainError("porosity must lie in (0, 1]");
  if (!(particle_diameter > 0.0)) throw DomainError("particle diameter must be positive");
  const double solid = 1.0 - phi;
  const double phi3 = phi * phi * phi;
  return {180.0 * solid * solid / (particle_diameter * particle_diameter * phi3),
          1.8 * solid / (particle_diameter * phi3)};
}

/// Smoothing used for |u| inside the drag term.
inline constexpr double kSpeedEpsilon = 1e-12;

// Scalar type that multiplies T: the element type for tape columns, T itself
// otherwise.
template <class T>
struct scalar_of {
  using type = T;
};
template <class S>
struct scalar_of<ad::Var<S>> {
  using type = S;
};
template <class T>
using scalar_t = typename scalar_of<T>::type;

/// Velocity, pressure and their spatial derivatives at a point (or, for tape
/// columns, at a set of points).
template <class T>
struct FlowJet {
  std::vector<T> u;                 // u_i
  T p{};                            // pressure
  std::vector<std::vector<T>> du;   // du[i][k] = d u_i / d x_k
  std::vector<std::vector<T>> d2u;  // d2u[i][k] = d^2 u_i / d x_k^2
  std::vector<T> dp;                // dp[k] = d p / d x_k

  int dim() const { return static_cast<int>(u.size()); }

  T laplacian(int i) const {
    T lap = d2u[static_cast<std::size_t>(i)][0];
    for (std::size_t k = 1; k < d2u[static_cast<std::size_t>(i)].size(); ++k) {
      lap = lap + d2u[static_cast<std::size_t>(i)][k];
    }
    return lap;
  }
};

/// Divergence: trace of the velocity Jacobian.
template <class T>
T continuity_residual(const std::vector<std::vector<T>>& du) {
  T div = du[0][0];
  for (std::size_t k = 1; k < du.size(); ++k) div = div + du[k][k];
  return div;
}

template <class T>
T speed(const std::vector<T>& u) {
  using std::sqrt;
  using S = scalar_t<T>;
  T s = u[0] * u[0];
  for (std::size_t k = 1; k < u.size(); ++k) s = s + u[k] * u[k];
  return sqrt(s + S(kSpeedEpsilon));
}

/// rho (u.grad)u + grad p - mu lap u + chi (mu D + rho F |u| / 2) u - f.
/// With chi = 0 this is the plain Navier-Stokes residual. An empty
/// `forcing` means zero forcing.
template <class T>
std::vector<T> momentum_residual(const FlowJet<T>& flow, const FluidProperties& props,
                                 const PorousCoefficients& coeffs, const T& chi, const std::vector<T>& forcing = {}) {
  using S = scalar_t<T>;
  const int d = flow.dim();
  if (!forcing.empty() && static_cast<int>(forcing.size()) != d) {
    throw ConfigurationError("forcing dimension differs from velocity dimension");
  }
  const T drag = chi * (S(props.mu * coeffs.D) + S(0.5 * props.rho * coeffs.F) * speed(flow.u));
  std::vector<T> r;
  r.reserve(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    T conv = flow.u[0] * flow.du[ui][0];
    for (int k = 1; k < d; ++k) conv = conv + flow.u[static_cast<std::size_t>(k)] * flow.du[ui][static_cast<std::size_t>(k)];
    T ri = S(props.rho) * conv + flow.dp[ui] - S(props.mu) * flow.laplacian(i) + drag * flow.u[ui];
    if (!forcing.empty()) ri = ri - forcing[ui];
    r.push_back(ri);
  }
  return r;
}

/// Same residual with per-point coefficients D and F (columns when T is a
/// tape node), so porous gating can vary point by point.
template <class T>
std::vector<T> momentum_residual_pointwise(const FlowJet<T>& flow, const FluidProperties& props, const T& D,
                                           const T& F, const T& chi, const std::vector<T>& forcing = {}) {
  using S = scalar_t<T>;
  const int d = flow.dim();
  if (!forcing.empty() && static_cast<int>(forcing.size()) != d) {
    throw ConfigurationError("forcing dimension differs from velocity dimension");
  }
  const T drag = chi * (S(props.mu) * D + S(0.5 * props.rho) * F * speed(flow.u));
  std::vector<T> r;
  r.reserve(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    T conv = flow.u[0] * flow.du[ui][0];
    for (int k = 1; k < d; ++k) conv = conv + flow.u[static_cast<std::size_t>(k)] * flow.du[ui][static_cast<std::size_t>(k)];
    T ri = S(props.rho) * conv + flow.dp[ui] - S(props.mu) * flow.laplacian(i) + drag * flow.u[ui];
    if (!forcing.empty()) ri = ri - forcing[ui];
    r.push_back(ri);
  }
  return r;
}

// Manufactured solution on the plane:
//   u_x = cos x sin y,  u_y = -sin x cos y,  p = -(rho/4)(cos 2x + cos 2y).
// The pressure cancels the convective term exactly, so the forcing only has
// to balance viscosity and drag: f = 2 mu u + chi (mu D + rho F |u| / 2) u.

struct MmsState {
  double ux = 0.0;
  double uy = 0.0;
  double p = 0.0;
};

inline MmsState mms_exact(double x, double y, double rho = 1.0) {
  return {std::cos(x) * std::sin(y), -std::sin(x) * std::cos(y), -0.25 * rho * (std::cos(2 * x) + std::cos(2 * y))};
}

/// Closed-form derivatives of the manufactured fields.
inline FlowJet<double> mms_flow_jet(double x, double y, double rho = 1.0) {
  const double cx = std::cos(x), sx = std::sin(x), cy = std::cos(y), sy = std::sin(y);
  FlowJet<double> j;
  j.u = {cx * sy, -sx * cy};
  j.p = -0.25 * rho * (std::cos(2 * x) + std::cos(2 * y));
  j.du = {{-sx * sy, cx * cy}, {-cx * cy, sx * sy}};
  j.d2u = {{-cx * sy, -cx * sy}, {sx * cy, sx * cy}};
  j.dp = {0.5 * rho * std::sin(2 * x), 0.5 * rho * std::sin(2 * y)};
  return j;
}

inline std::vector<double> mms_forcing(double x, double y, const FluidProperties& props,
                                       const PorousCoefficients& coeffs, double chi) {
  const MmsState s = mms_exact(x, y, props.rho);
  const double mag = std::sqrt(s.ux * s.ux + s.uy * s.uy + kSpeedEpsilon);
  const double drag = chi * (props.mu * coeffs.D + 0.5 * props.rho * coeffs.F * mag);
  return {2.0 * props.mu * s.ux + drag * s.ux, 2.0 * props.mu * s.uy + drag * s.uy};
}

/// Forcing with the viscous sign pattern (+2 mu u_x, -2 mu u_y) of the
/// commonly quoted form; kept only for comparison with mms_forcing.
inline std::vector<double> mms_forcing_quoted(double x, double y, const FluidProperties& props,
                                              const PorousCoefficients& coeffs, double chi) {
  const MmsState s = mms_exact(x, y, props.rho);
  const double mag = std::sqrt(s.ux * s.ux + s.uy * s.uy + kSpeedEpsilon);
  const double drag = chi * (props.mu * coeffs.D + 0.5 * props.rho * coeffs.F * mag);
  return {2.0 * props.mu * s.ux + drag * s.ux, -2.0 * props.mu * s.uy + drag * s.uy};
}

/// Per-feature affine scales of the normalized fields:
/// x = mean + std * x_hat, and likewise for velocity and pressure.
struct FieldScales {
  std::vector<double> coord_mean, coord_std;
  std::vector<double> velocity_mean, velocity_std;
  double pressure_mean = 0.0;
  double pressure_std = 1.0;

  int dim() const { return static_cast<int>(coord_std.size()); }
};

/// Converts residuals on normalized fields to physical residuals divided by
/// one positive factor per equation. Continuity keeps factor 1 (its
/// coefficients are sigma_u_k / sigma_x_k); momentum component i is divided
/// by rho sigma_u0 sigma_ui / sigma_x0, which makes the coefficient of
/// u0_hat d(ui_hat)/d(x0_hat) equal to one.
class ResidualScaling {
 public:
  ResidualScaling(FieldScales scales, const FluidProperties& props) : s_(std::move(scales)), props_(props) {
    props_.validate();
    const int d = s_.dim();
    if (d < 1 || static_cast<int>(s_.velocity_std.size()) != d || static_cast<int>(s_.velocity_mean.size()) != d ||
        static_cast<int>(s_.coord_mean.size()) != d) {
      throw ConfigurationError("field scales have inconsistent dimensions");
    }
    auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    for (int k = 0; k < d; ++k) {
      if (!positive(s_.coord_std[static_cast<std::size_t>(k)]) ||
          !positive(s_.velocity_std[static_cast<std::size_t>(k)])) {
        throw ConfigurationError("normalization standard deviations must be positive");
      }
    }
    if (!positive(s_.pressure_std)) throw ConfigurationError("normalization standard deviations must be positive");
    for (int i = 0; i < d; ++i) {
      momentum_factor_.push_back(props_.rho * s_.velocity_std[0] * s_.velocity_std[static_cast<std::size_t>(i)] /
                                 s_.coord_std[0]);
      if (!positive(momentum_factor_.back())) throw ConfigurationError("non-positive momentum scale factor");
    }
  }

  const FieldScales& scales() const { return s_; }
  double continuity_factor() const { return 1.0; }
  double momentum_factor(int i) const { return momentum_factor_[static_cast<std::size_t>(i)]; }

  /// Physical-unit flow jet from a normalized one (chain rule per axis).
  template <class T>
  FlowJet<T> to_physical(const FlowJet<T>& n) const {
    using S = scalar_t<T>;
    const int d = s_.dim();
    if (n.dim() != d) throw ConfigurationError("flow jet dimension differs from normalization dimension");
    FlowJet<T> f;
    f.du.resize(static_cast<std::size_t>(d));
    f.d2u.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double su = s_.velocity_std[ui];
      f.u.push_back(S(su) * n.u[ui] + S(s_.velocity_mean[ui]));
      for (int k = 0; k < d; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const double sx = s_.coord_std[uk];
        f.du[ui].push_back(S(su / sx) * n.du[ui][uk]);
        f.d2u[ui].push_back(S(su / (sx * sx)) * n.d2u[ui][uk]);
      }
    }
    f.p = S(s_.pressure_std) * n.p + S(s_.pressure_mean);
    for (int k = 0; k < d; ++k) f.dp.push_back(S(s_.pressure_std / s_.coord_std[static_cast<std::size_t>(k)]) * n.dp[static_cast<std::size_t>(k)]);
    return f;
  }

  template <class T>
  struct Scaled {
    T continuity;
    std::vector<T> momentum;
  };

  /// Residuals of a normalized flow jet. `forcing` is in physical units.
  template <class T>
  Scaled<T> residuals(const FlowJet<T>& normalized, const PorousCoefficients& coeffs, const T& chi,
                      const std::vector<T>& forcing = {}) const {
    using S = scalar_t<T>;
    FlowJet<T> phys = to_physical(normalized);
    Scaled<T> out{continuity_residual(phys.du), momentum_residual(phys, props_, coeffs, chi, forcing)};
    for (std::size_t i = 0; i < out.momentum.size(); ++i) {
      out.momentum[i] = S(1.0 / momentum_factor_[i]) * out.momentum[i];
    }
    return out;
  }

  /// Residuals with per-point D and F (physical units).
  template <class T>
  Scaled<T> residuals_pointwise(const FlowJet<T>& normalized, const T& D, const T& F, const T& chi,
                                const std::vector<T>& forcing = {}) const {
    using S = scalar_t<T>;
    FlowJet<T> phys = to_physical(normalized);
    Scaled<T> out{continuity_residual(phys.du), momentum_residual_pointwise(phys, props_, D, F, chi, forcing)};
    for (std::size_t i = 0; i < out.momentum.size(); ++i) {
      out.momentum[i] = S(1.0 / momentum_factor_[i]) * out.momentum[i];
    }
    return out;
  }

 private:
  FieldScales s_;
  FluidProperties props_;
  std::vector<double> momentum_factor_;
};

}  // namespace pipn::physics
