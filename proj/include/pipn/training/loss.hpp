#pragma once

// Four-term physics-informed loss. Residual terms use the scaled residuals of
// the normalized network output at the collocation points (interior and
// porous interface); boundary and data terms compare normalized outputs with
// normalized targets.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pipn/ad/jet.hpp"
#include "pipn/ad/tape.hpp"
#include "pipn/dataset/normalization.hpp"
#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/inputs.hpp"
#include "pipn/physics/equations.hpp"

namespace pipn::training {

struct LossWeights {
  double m = 1.0, c = 1.0, b = 1.0, d = 0.0;

  void validate() const {
    for (double w : {m, c, b, d}) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigurationError("loss weights must be finite and nonnegative");
    }
    if (m + c + b + d <= 0.0) throw ConfigurationError("at least one loss weight must be positive");
  }

  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double l_m = 0.0, l_c = 0.0, l_b = 0.0, l_d = 0.0, total = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

inline double weighted_total(const LossWeights& w, double l_m, double l_c, double l_b, double l_d) {
  return w.m * l_m + w.c * l_c + w.b * l_b + w.d * l_d;
}

inline LossBreakdown make_breakdown(const LossWeights& w, double l_m, double l_c, double l_b, double l_d) {
  return {l_m, l_c, l_b, l_d, weighted_total(w, l_m, l_c, l_b, l_d)};
}

/// Everything about one case that stays fixed during training.
struct PreparedCase {
  std::string id;
  int dim = 2;
  PointCloudCase physical;
  models::OrderedCloud cloud;  // normalized coordinates and features
  physics::FluidProperties fluid;

  // Collocation rows [0, cloud.input.n_deriv): physical chi, D, F, forcing.
  Eigen::VectorXd chi, D, F;
  Eigen::MatrixXd forcing;  // n_colloc x dim, empty without forcing

  // Boundary rows (cloud order) with normalized targets and masks, n_b x (dim + 1).
  std::vector<int> boundary_rows;
  Eigen::MatrixXd boundary_target, boundary_mask;

  // Observation rows (cloud order) with normalized targets.
  std::vector<int> observation_rows;
  Eigen::MatrixXd observation_target;

  models::BranchInput branch;  // normalized; empty unless prepared for the operator model

  int n_colloc() const { return cloud.input.n_deriv; }
};

struct PrepareOptions {
  int branch_points = 0;  // 0: no branch records
  std::uint64_t branch_seed = 0;
};

namespace detail {

inline Eigen::RowVectorXd normalized_state(const dataset::NormalizationStats& st, const Eigen::RowVectorXd& u,
                                           double p) {
  const int d = st.dim;
  Eigen::RowVectorXd out(d + 1);
  for (int k = 0; k < d; ++k) out(k) = st.velocity[static_cast<std::size_t>(k)].forward(u(k));
  out(d) = st.pressure.forward(p);
  return out;
}

}  // namespace detail

/// Boundary targets: reference fields where present. Otherwise the inlet
/// velocity from the case metadata, zero outlet pressure and no-slip walls;
/// the remaining components are masked out. Interface points carry no
/// boundary target (they are collocation points).
inline PreparedCase prepare_case(const PointCloudCase& c, const dataset::NormalizationStats& st,
                                 const PrepareOptions& opt = {}) {
  c.validate();
  const int d = c.dim;
  PreparedCase pc;
  pc.id = c.meta.case_id;
  pc.dim = d;
  pc.physical = c;
  pc.fluid = c.meta.fluid;
  const PointCloudCase nc = dataset::normalize_case(c, st);
  pc.cloud = models::make_cloud(nc, true);
  const int nf = pc.n_colloc();
  pc.chi.resize(nf);
  pc.D.resize(nf);
  pc.F.resize(nf);
  const bool mms = c.meta.forcing == "mms";
  if (mms) {
    if (d != 2) throw ConfigurationError("manufactured forcing is defined in 2D only");
    pc.forcing.resize(nf, d);
  }
  for (int j = 0; j < nf; ++j) {
    const int i = pc.cloud.order[static_cast<std::size_t>(j)];
    pc.chi(j) = c.chi(i);
    pc.D(j) = c.D(i);
    pc.F(j) = c.F(i);
    if (mms) {
      const auto f = physics::mms_forcing(c.coords(i, 0), c.coords(i, 1), c.meta.fluid, {c.D(i), c.F(i)}, c.chi(i));
      pc.forcing(j, 0) = f[0];
      pc.forcing(j, 1) = f[1];
    }
  }

  for (int j = nf; j < c.size(); ++j) pc.boundary_rows.push_back(j);
  const auto nb = static_cast<Eigen::Index>(pc.boundary_rows.size());
  pc.boundary_target = Eigen::MatrixXd::Zero(nb, d + 1);
  pc.boundary_mask = Eigen::MatrixXd::Zero(nb, d + 1);
  Eigen::RowVectorXd inlet_u = Eigen::RowVectorXd::Zero(d);
  inlet_u(0) = c.meta.inlet_speed * std::cos(c.meta.inlet_angle);
  if (d > 1) inlet_u(1) = c.meta.inlet_speed * std::sin(c.meta.inlet_angle);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const int i = pc.cloud.order[static_cast<std::size_t>(pc.boundary_rows[static_cast<std::size_t>(b)])];
    if (c.reference) {
      pc.boundary_target.row(b) = detail::normalized_state(st, c.reference->u.row(i), c.reference->p(i));
      pc.boundary_mask.row(b).setOnes();
    } else if (c.has_tag(i, BoundaryTag::inlet)) {
      pc.boundary_target.row(b) = detail::normalized_state(st, inlet_u, 0.0);
      pc.boundary_mask.row(b).head(d).setOnes();
    } else if (c.has_tag(i, BoundaryTag::outlet)) {
      pc.boundary_target.row(b) = detail::normalized_state(st, Eigen::RowVectorXd::Zero(d), 0.0);
      pc.boundary_mask(b, d) = 1.0;
    } else if (c.has_tag(i, BoundaryTag::wall)) {
      pc.boundary_target.row(b) = detail::normalized_state(st, Eigen::RowVectorXd::Zero(d), 0.0);
      pc.boundary_mask.row(b).head(d).setOnes();
    }
  }

  if (!c.observations.empty()) {
    if (!c.reference) throw ConfigurationError("case '" + c.meta.case_id + "' has observations but no reference");
    std::vector<int> cloud_row(static_cast<std::size_t>(c.size()));
    for (int j = 0; j < c.size(); ++j) cloud_row[static_cast<std::size_t>(pc.cloud.order[static_cast<std::size_t>(j)])] = j;
    pc.observation_target.resize(static_cast<Eigen::Index>(c.observations.size()), d + 1);
    for (std::size_t k = 0; k < c.observations.size(); ++k) {
      const int i = c.observations[k];
      pc.observation_rows.push_back(cloud_row[static_cast<std::size_t>(i)]);
      pc.observation_target.row(static_cast<Eigen::Index>(k)) =
          detail::normalized_state(st, c.reference->u.row(i), c.reference->p(i));
    }
  }

  if (opt.branch_points > 0) {
    pc.branch = models::normalize_branch(models::select_branch_points(c, opt.branch_points, opt.branch_seed), st);
  }
  return pc;
}

template <class Scalar>
struct LossTerms {
  ad::Var<Scalar> l_m, l_c, l_b, l_d, total;

  LossBreakdown values(const LossWeights& w) const {
    return make_breakdown(w, static_cast<double>(l_m.item()), static_cast<double>(l_c.item()),
                          static_cast<double>(l_b.item()), static_cast<double>(l_d.item()));
  }
};

/// Normalized flow jet (tape columns) at the collocation points of `y`.
template <class Scalar>
physics::FlowJet<ad::Var<Scalar>> flow_jet_of(const ad::Jet<Scalar>& y, int dim) {
  physics::FlowJet<ad::Var<Scalar>> j;
  j.du.resize(static_cast<std::size_t>(dim));
  j.d2u.resize(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) {
    j.u.push_back(ad::jet_value(y, i));
    for (int k = 0; k < dim; ++k) {
      j.du[static_cast<std::size_t>(i)].push_back(ad::jet_first(y, i, k));
      j.d2u[static_cast<std::size_t>(i)].push_back(ad::jet_second(y, i, k));
    }
  }
  j.p = ad::jet_value(y, dim);
  for (int k = 0; k < dim; ++k) j.dp.push_back(ad::jet_first(y, dim, k));
  return j;
}

namespace detail {

template <class Scalar>
ad::Var<Scalar> masked_mean_sq(ad::Tape<Scalar>& t, ad::Var<Scalar> pred, const Eigen::MatrixXd& target,
                               const Eigen::MatrixXd* mask) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  ad::Var<Scalar> diff = t.sub(pred, t.constant(target.cast<Scalar>()));
  if (mask) diff = t.mul_const(diff, Matrix(mask->cast<Scalar>()));
  return t.scale(t.sum(t.mul(diff, diff)), Scalar(1.0 / static_cast<double>(pred.rows())));
}

}  // namespace detail

/// Loss of a network output jet laid out in the case's cloud order (first
/// n_colloc rows carry derivatives). With an empty boundary or observation
/// set the corresponding term is zero.
template <class Scalar>
LossTerms<Scalar> compute_loss(const ad::Jet<Scalar>& y, const PreparedCase& pc,
                               const dataset::NormalizationStats& st, const LossWeights& w) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Var = ad::Var<Scalar>;
  w.validate();
  auto& t = y.tape();
  const int d = pc.dim;
  const int nf = pc.n_colloc();
  if (y.layout.n_deriv != nf || y.layout.n_value != pc.cloud.input.size() || y.cols() != d + 1) {
    throw ConfigurationError("compute_loss: output layout does not match the prepared case");
  }
  if (w.d > 0.0 && pc.observation_rows.empty()) {
    throw ConfigurationError("data weight is positive but case '" + pc.id + "' has no observation points");
  }
  LossTerms<Scalar> out;
  const Var zero = t.constant(Matrix::Zero(1, 1));

  if (nf > 0) {
    const physics::ResidualScaling scaling(st.field_scales(), pc.fluid);
    const auto jet = flow_jet_of(y, d);
    const Var chi = t.constant(pc.chi.cast<Scalar>());
    const Var D = t.constant(pc.D.cast<Scalar>());
    const Var F = t.constant(pc.F.cast<Scalar>());
    std::vector<Var> forcing;
    for (Eigen::Index k = 0; k < pc.forcing.cols(); ++k) forcing.push_back(t.constant(pc.forcing.col(k).cast<Scalar>()));
    const auto r = scaling.residuals_pointwise(jet, D, F, chi, forcing);
    const Scalar inv = Scalar(1.0 / nf);
    out.l_c = t.scale(t.sum(t.mul(r.continuity, r.continuity)), inv);
    Var sq = t.mul(r.momentum[0], r.momentum[0]);
    for (int i = 1; i < d; ++i) sq = t.add(sq, t.mul(r.momentum[static_cast<std::size_t>(i)], r.momentum[static_cast<std::size_t>(i)]));
    out.l_m = t.scale(t.sum(sq), inv);
  } else {
    out.l_c = zero;
    out.l_m = zero;
  }

  if (!pc.boundary_rows.empty()) {
    const Var pred = t.gather_rows(t.slice(y.m, 0, y.layout.n_value, 0, d + 1), pc.boundary_rows);
    out.l_b = detail::masked_mean_sq(t, pred, pc.boundary_target, &pc.boundary_mask);
  } else {
    out.l_b = zero;
  }
  if (!pc.observation_rows.empty()) {
    const Var pred = t.gather_rows(t.slice(y.m, 0, y.layout.n_value, 0, d + 1), pc.observation_rows);
    out.l_d = detail::masked_mean_sq(t, pred, pc.observation_target, nullptr);
  } else {
    out.l_d = zero;
  }
  Var total = t.scale(out.l_m, Scalar(w.m));
  total = t.add(total, t.scale(out.l_c, Scalar(w.c)));
  total = t.add(total, t.scale(out.l_b, Scalar(w.b)));
  total = t.add(total, t.scale(out.l_d, Scalar(w.d)));
  out.total = total;
  return out;
}

}  // namespace pipn::training
