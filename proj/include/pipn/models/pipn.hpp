#pragma once

// Point-cloud network with a max-pooled global feature. Spatial derivatives
// at a point include the path through the pooled feature: a pooled channel
// depends on a point's coordinates only when that point is the channel's
// argmax, so the global encoder jet is evaluated at the argmax points and
// routed back to them channel by channel.

#include <Eigen/Dense>

#include <algorithm>
#include <string>
#include <vector>

#include "pipn/ad/jet.hpp"
#include "pipn/ad/params.hpp"
#include "pipn/ad/tape.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/config.hpp"

namespace pipn::models {

/// One point cloud, normalized. The first `n_deriv` points carry spatial
/// derivatives.
template <class Scalar = double>
struct CloudInput {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix coords;    // n x dim
  Matrix features;  // n x kPointFeatures: sdf, one-hot
  int n_deriv = 0;

  int size() const { return static_cast<int>(coords.rows()); }
};

template <class Scalar>
struct PipnForward {
  ad::Jet<Scalar> output;   // n x (dim + 1): u..., p
  ad::Var<Scalar> global;   // 1 x global feature
  std::vector<int> argmax;  // point index per global channel
};

namespace detail {

template <class Scalar>
void check_cloud(const CloudInput<Scalar>& in, int dim, const char* who) {
  if (in.coords.cols() != dim) throw ConfigurationError(std::string(who) + ": coordinate width does not match dim");
  if (in.features.rows() != in.coords.rows() || in.features.cols() != kPointFeatures) {
    throw ConfigurationError(std::string(who) + ": feature matrix must be n x " + std::to_string(kPointFeatures));
  }
  if (in.n_deriv < 0 || in.n_deriv > in.size()) throw ConfigurationError(std::string(who) + ": bad derivative count");
}

/// Dropout masks for the last two hidden layers of a stack with the given
/// hidden widths; null entries elsewhere.
template <class Scalar>
struct HiddenDropout {
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> storage;
  std::vector<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>*> per_layer;

  HiddenDropout(const std::vector<int>& hidden, int rows, double p, const ForwardOptions& opt) {
    per_layer.assign(hidden.size(), nullptr);
    if (!opt.training || p <= 0.0 || hidden.empty()) return;
    const std::size_t first = hidden.size() >= 2 ? hidden.size() - 2 : 0;
    std::vector<int> widths(hidden.begin() + static_cast<std::ptrdiff_t>(first), hidden.end());
    for (auto& m : dropout_masks(widths, rows, p, opt.dropout_seed)) storage.push_back(m.template cast<Scalar>());
    for (std::size_t i = first; i < hidden.size(); ++i) per_layer[i] = &storage[i - first];
  }
};

}  // namespace detail

template <class Scalar>
PipnForward<Scalar> pipn_forward(ad::Tape<Scalar>& tape, const ad::BoundParameters<Scalar>& params,
                                 const PipnConfig& cfg, const CloudInput<Scalar>& in,
                                 const ForwardOptions& opt = {}) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  detail::check_cloud(in, cfg.dim, "pipn");
  const int n = in.size();
  if (n < 2) throw ConfigurationError("pipn: a point cloud needs at least 2 points");

  const ad::Mlp<Scalar> local(cfg.local_shape(), params);
  const ad::Mlp<Scalar> global(cfg.global_shape(), params);
  const ad::Mlp<Scalar> decoder(cfg.decoder_shape(), params);
  const int n_local = cfg.local_dim();
  const int n_global = cfg.global_feature();
  const int width0 = cfg.decoder_widths.front();

  ad::Jet<Scalar> x = ad::seed_coordinates(tape, in.coords, in.n_deriv);
  const ad::JetLayout L = x.layout;
  ad::Jet<Scalar> h = local(x);
  ad::Jet<Scalar> g_in = ad::concat(h, ad::constant_jet(tape, in.features, L));

  // Global encoder on value rows, pooled.
  const int g_cols = static_cast<int>(g_in.cols());
  ad::Jet<Scalar> g_val{tape.slice(g_in.m, 0, n, 0, g_cols), ad::JetLayout{n, 0, cfg.dim}};
  ad::Var<Scalar> pooled = tape.max_pool(global(g_val).m, 0, n);
  std::vector<int> argmax = tape.argmax(pooled);

  // Decoder layer 0 with its weight split into local and global blocks.
  ad::Var<Scalar> w0 = decoder.weight(0);
  ad::Var<Scalar> w_local = tape.slice(w0, 0, n_local, 0, width0);
  ad::Var<Scalar> w_global = tape.slice(w0, n_local, n_global, 0, width0);
  ad::Var<Scalar> z = tape.matmul(h.m, w_local);
  z = tape.add_row(z, tape.matmul(pooled, w_global), 0, n);

  // Pooled-feature derivatives, owned by the argmax points.
  std::vector<int> owners;
  for (int r : argmax) {
    if (r < L.n_deriv) owners.push_back(r);
  }
  std::sort(owners.begin(), owners.end());
  owners.erase(std::unique(owners.begin(), owners.end()), owners.end());
  if (!owners.empty()) {
    const int m = static_cast<int>(owners.size());
    const ad::JetLayout G{m, m, cfg.dim};
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(G.rows()));
    for (int u : owners) rows.push_back(u);
    for (int b = 0; b < 2 * cfg.dim; ++b) {
      for (int u : owners) rows.push_back(L.n_value + b * L.n_deriv + u);
    }
    ad::Jet<Scalar> g_owned{tape.gather_rows(g_in.m, rows), G};
    ad::Jet<Scalar> g_jet = global(g_owned);
    Matrix own = Matrix::Zero(G.rows(), n_global);
    for (int j = 0; j < m; ++j) {
      for (int c = 0; c < n_global; ++c) {
        if (argmax[static_cast<std::size_t>(c)] != owners[static_cast<std::size_t>(j)]) continue;
        for (int b = 0; b < 2 * cfg.dim; ++b) own(m + b * m + j, c) = Scalar(1);
      }
    }
    ad::Var<Scalar> routed = tape.matmul(tape.mul_const(g_jet.m, std::move(own)), w_global);
    ad::Var<Scalar> deriv = tape.slice(routed, m, 2 * cfg.dim * m, 0, width0);
    std::vector<int> targets(rows.begin() + m, rows.end());
    z = tape.add(z, tape.scatter_rows(deriv, std::move(targets), L.rows()));
  }
  z = tape.add_row(z, decoder.bias(0), 0, n);

  const detail::HiddenDropout<Scalar> drop(cfg.decoder_widths, n, cfg.dropout, opt);
  ad::Jet<Scalar> y = ad::activate(ad::Jet<Scalar>{z, L}, cfg.activation);
  if (drop.per_layer[0]) y = ad::mask_points(y, *drop.per_layer[0]);
  for (std::size_t i = 1; i < decoder.depth(); ++i) {
    y = ad::dense(y, decoder.weight(i), decoder.bias(i));
    if (i + 1 < decoder.depth()) {
      y = ad::activate(y, cfg.activation);
      if (drop.per_layer[i]) y = ad::mask_points(y, *drop.per_layer[i]);
    }
  }
  return {y, pooled, std::move(argmax)};
}

/// Value-only prediction (n x (dim + 1)) in evaluation mode.
inline Eigen::MatrixXd pipn_predict(const ModelParameters& model, const CloudInput<double>& in) {
  if (model.kind != ModelKind::pipn) throw ConfigurationError("pipn_predict: model is not a pipn");
  ad::Tape<double> tape;
  const ad::BoundParameters<double> params(tape, model.values);
  CloudInput<double> plain = in;
  plain.n_deriv = 0;
  return pipn_forward(tape, params, model.pipn, plain).output.m.value();
}

}  // namespace pipn::models
