#pragma once

// Operator network: a pooled geometry latent and a pooled boundary-condition
// latent condition a coordinate trunk. The geometry cloud and the branch
// records are inputs of the operator, so query-coordinate derivatives see
// them as constants.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "pipn/ad/jet.hpp"
#include "pipn/ad/params.hpp"
#include "pipn/ad/tape.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/config.hpp"
#include "pipn/models/inputs.hpp"
#include "pipn/models/pipn.hpp"

namespace pipn::models {

template <class Scalar>
struct PiganoForward {
  ad::Jet<Scalar> output;          // queries x (dim + 1)
  ad::Var<Scalar> geometry_latent;  // 1 x geometry_latent
  ad::Var<Scalar> branch_latent;    // 1 x branch_latent
};

/// `geometry` supplies coordinates and features of the domain cloud (its
/// n_deriv is ignored); `query` supplies the evaluation points.
template <class Scalar>
PiganoForward<Scalar> pigano_forward(ad::Tape<Scalar>& tape, const ad::BoundParameters<Scalar>& params,
                                     const PiganoConfig& cfg, const CloudInput<Scalar>& geometry,
                                     const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& branch_records,
                                     const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& query_coords,
                                     int n_deriv, const ForwardOptions& opt = {}) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  detail::check_cloud(geometry, cfg.dim, "pigano geometry");
  if (geometry.size() < 2) throw ConfigurationError("pigano: a geometry cloud needs at least 2 points");
  if (branch_records.cols() != cfg.branch_record_dim()) {
    throw ConfigurationError("pigano: branch records must have " + std::to_string(cfg.branch_record_dim()) +
                             " columns");
  }
  if (branch_records.rows() < 1) throw ConfigurationError("pigano: no branch records");
  if (query_coords.cols() != cfg.dim || query_coords.rows() < 1) {
    throw ConfigurationError("pigano: query coordinates do not match dim");
  }

  const ad::Mlp<Scalar> geo(cfg.geometry_shape(), params);
  const ad::Mlp<Scalar> branch(cfg.branch_shape(), params);
  const ad::Mlp<Scalar> trunk(cfg.trunk_shape(), params);
  const ad::Mlp<Scalar> head(cfg.output_shape(), params);

  const int ng = geometry.size();
  Matrix geo_in(ng, cfg.dim + kPointFeatures);
  geo_in << geometry.coords, geometry.features;
  const ad::JetLayout plain_g{ng, 0, cfg.dim};
  ad::Var<Scalar> geo_latent =
      tape.max_pool(geo(ad::Jet<Scalar>{tape.constant(std::move(geo_in)), plain_g}).m, 0, ng);

  const int nb = static_cast<int>(branch_records.rows());
  const ad::JetLayout plain_b{nb, 0, cfg.dim};
  ad::Var<Scalar> br_latent = tape.max_pool(branch(ad::Jet<Scalar>{tape.constant(branch_records), plain_b}).m, 0, nb);

  const int nq = static_cast<int>(query_coords.rows());
  ad::Jet<Scalar> x = ad::seed_coordinates(tape, query_coords, n_deriv);
  const ad::JetLayout L = x.layout;

  // Trunk layer 0 on (coords, geometry latent): the latent block only shifts
  // value rows.
  const int w0 = cfg.trunk_widths.front();
  ad::Var<Scalar> tw = trunk.weight(0);
  ad::Var<Scalar> z = tape.matmul(x.m, tape.slice(tw, 0, cfg.dim, 0, w0));
  ad::Var<Scalar> shift = tape.add(tape.matmul(geo_latent, tape.slice(tw, cfg.dim, cfg.geometry_latent, 0, w0)),
                                   trunk.bias(0));
  z = tape.add_row(z, shift, 0, nq);
  ad::Jet<Scalar> t = ad::activate(ad::Jet<Scalar>{z, L}, cfg.activation);
  for (std::size_t i = 1; i < trunk.depth(); ++i) {
    t = ad::activate(ad::dense(t, trunk.weight(i), trunk.bias(i)), cfg.activation);
  }
  ad::Jet<Scalar> y{tape.mul_row(t.m, br_latent), L};

  const detail::HiddenDropout<Scalar> drop(cfg.output_widths, nq, cfg.dropout, opt);
  y = head.forward(y, &drop.per_layer);
  return {y, geo_latent, br_latent};
}

/// Value-only prediction at every geometry point, in cloud order.
inline Eigen::MatrixXd pigano_predict(const ModelParameters& model, const CloudInput<double>& cloud,
                                      const BranchInput& branch) {
  if (model.kind != ModelKind::pigano) throw ConfigurationError("pigano_predict: model is not a pigano");
  if (!branch.normalized) throw ConfigurationError("pigano_predict: branch input must be normalized");
  ad::Tape<double> tape;
  const ad::BoundParameters<double> params(tape, model.values);
  return pigano_forward(tape, params, model.pigano, cloud, branch.records, cloud.coords, 0).output.m.value();
}

}  // namespace pipn::models
