#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pipn/errors.hpp"
#include "pipn/physics/equations.hpp"

namespace pipn {

/// Boundary roles; the one-hot column order follows the enumerator values.
enum class BoundaryTag : int { inlet = 0, outlet = 1, wall = 2, interface = 3 };

inline constexpr int kBoundaryTypes = 4;

inline const char* to_string(BoundaryTag t) {
  switch (t) {
    case BoundaryTag::inlet: return "inlet";
    case BoundaryTag::outlet: return "outlet";
    case BoundaryTag::wall: return "wall";
    case BoundaryTag::interface: return "interface";
  }
  return "?";
}

inline BoundaryTag boundary_tag_from_string(const std::string& s) {
  for (int i = 0; i < kBoundaryTypes; ++i) {
    if (s == to_string(static_cast<BoundaryTag>(i))) return static_cast<BoundaryTag>(i);
  }
  throw ConfigurationError("unknown boundary tag '" + s + "'");
}

/// Tolerance on |sdf| for points that sit on the porous interface.
inline constexpr double kInterfaceTolerance = 1e-9;

struct CaseMeta {
  std::string case_id;
  std::string provenance;
  double inlet_speed = 0.0;  // m/s
  double inlet_angle = 0.0;  // radians from +x
  physics::FluidProperties fluid;
  physics::PorousCoefficients porous;
  std::string forcing = "none";  // "none" or "mms"
  std::optional<std::string> solid_surface_tag;
  int wall_normal_axis = 1;

  bool operator==(const CaseMeta&) const = default;
};

/// Per-point velocity and pressure.
struct FlowField {
  Eigen::MatrixXd u;  // n x dim
  Eigen::VectorXd p;  // n

  bool operator==(const FlowField& o) const {
    return u.rows() == o.u.rows() && u.cols() == o.u.cols() && p.size() == o.p.size() && u == o.u && p == o.p;
  }
};

/// One flow scenario as a fixed-size point cloud (struct of arrays).
struct PointCloudCase {
  int dim = 2;
  Eigen::MatrixXd coords;  // n x dim
  Eigen::VectorXd chi;     // 0 fluid, 1 porous
  Eigen::VectorXd sdf;     // negative inside the porous region
  Eigen::MatrixXd onehot;  // n x 4, all-zero rows are interior points
  Eigen::VectorXd D;       // per point; zero outside the porous region
  Eigen::VectorXd F;
  std::optional<FlowField> reference;
  CaseMeta meta;
  std::vector<int> observations;
  std::uint64_t observation_seed = 0;

  int size() const { return static_cast<int>(coords.rows()); }

  /// Field-for-field equality (exact).
  bool operator==(const PointCloudCase& o) const {
    auto same = [](const auto& a, const auto& b) { return a.rows() == b.rows() && a.cols() == b.cols() && a == b; };
    return dim == o.dim && same(coords, o.coords) && same(chi, o.chi) && same(sdf, o.sdf) && same(onehot, o.onehot) &&
           same(D, o.D) && same(F, o.F) && reference == o.reference && meta == o.meta &&
           observations == o.observations && observation_seed == o.observation_seed;
  }

  bool is_boundary(int i) const { return onehot.row(i).sum() > 0.5; }

  bool has_tag(int i, BoundaryTag t) const { return onehot(i, static_cast<int>(t)) > 0.5; }

  int count_tag(BoundaryTag t) const {
    int n = 0;
    for (int i = 0; i < size(); ++i) n += has_tag(i, t) ? 1 : 0;
    return n;
  }

  std::vector<int> indices_with_tag(BoundaryTag t) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
      if (has_tag(i, t)) out.push_back(i);
    }
    return out;
  }

  /// Throws FormatError naming the first offending point.
  void validate() const {
    const int n = size();
    if (dim != 2 && dim != 3) throw FormatError("case dimension must be 2 or 3");
    if (coords.cols() != dim) throw FormatError("coordinate columns differ from dim");
    auto rows_ok = [n](Eigen::Index r) { return r == n; };
    if (!rows_ok(chi.size()) || !rows_ok(sdf.size()) || !rows_ok(onehot.rows()) || !rows_ok(D.size()) ||
        !rows_ok(F.size())) {
      throw FormatError("inconsistent point counts between columns");
    }
    if (onehot.cols() != kBoundaryTypes) throw FormatError("boundary one-hot must have 4 columns");
    auto at = [](int i) { return " at point " + std::to_string(i); };
    std::optional<double> porous_D, porous_F;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < dim; ++k) {
        if (!std::isfinite(coords(i, k))) throw FormatError("non-finite coordinate" + at(i));
      }
      if (chi(i) != 0.0 && chi(i) != 1.0) throw FormatError("chi must be 0 or 1" + at(i));
      if (!std::isfinite(sdf(i))) throw FormatError("non-finite sdf" + at(i));
      double tags = 0.0;
      for (int t = 0; t < kBoundaryTypes; ++t) {
        const double v = onehot(i, t);
        if (v != 0.0 && v != 1.0) throw FormatError("one-hot entries must be 0 or 1" + at(i));
        tags += v;
      }
      if (tags > 1.0) throw FormatError("more than one boundary tag" + at(i));
      const bool on_interface = onehot(i, static_cast<int>(BoundaryTag::interface)) == 1.0;
      if (on_interface) {
        if (chi(i) != 1.0) throw FormatError("interface point must have chi = 1" + at(i));
        if (std::abs(sdf(i)) > kInterfaceTolerance) throw FormatError("interface point has |sdf| > 1e-9" + at(i));
      } else if (chi(i) == 1.0 && sdf(i) > kInterfaceTolerance) {
        throw FormatError("chi = 1 but sdf > 0" + at(i));
      } else if (chi(i) == 0.0 && sdf(i) < -kInterfaceTolerance) {
        throw FormatError("chi = 0 but sdf < 0" + at(i));
      }
      if (!(D(i) >= 0.0) || !(F(i) >= 0.0)) throw FormatError("negative porous coefficient" + at(i));
      if (chi(i) == 1.0) {
        if (!porous_D) {
          porous_D = D(i);
          porous_F = F(i);
        } else if (D(i) != *porous_D || F(i) != *porous_F) {
          throw FormatError("D and F must be constant over the porous points" + at(i));
        }
      }
    }
    if (reference) {
      if (reference->u.rows() != n || reference->u.cols() != dim || reference->p.size() != n) {
        throw FormatError("reference fields have inconsistent shape");
      }
      if (!reference->u.allFinite() || !reference->p.allFinite()) throw FormatError("non-finite reference field");
    }
    for (int idx : observations) {
      if (idx < 0 || idx >= n) throw FormatError("observation index out of range: " + std::to_string(idx));
    }
    meta.fluid.validate();
    meta.porous.validate();
    if (meta.forcing != "none" && meta.forcing != "mms") throw FormatError("unknown forcing '" + meta.forcing + "'");
  }
};

}  // namespace pipn
