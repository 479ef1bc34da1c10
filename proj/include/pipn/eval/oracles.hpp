#pragma once

// Self-checks shared by the command-line `check` and the acceptance run:
// manufactured-solution residuals, spatial derivatives of a random network
// against central differences, and full-loss parameter gradients against
// central differences.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pipn/ad/dual.hpp"
#include "pipn/dataset/generators.hpp"
#include "pipn/dataset/ingest.hpp"
#include "pipn/dataset/normalization.hpp"
#include "pipn/models/pipn.hpp"
#include "pipn/physics/equations.hpp"
#include "pipn/training/train.hpp"

namespace pipn::eval {

inline double halton(int index, int base) {
  double f = 1.0, r = 0.0;
  for (int i = index; i > 0; i /= base) {
    f /= base;
    r += f * (i % base);
  }
  return r;
}

struct MmsResidualReport {
  double momentum = 0.0;    // max Euclidean norm of the momentum residual
  double continuity = 0.0;  // max |continuity residual|
};

/// Exact fields with the derived forcing at `n` Halton points of
/// [0, 2 pi]^2, with D and F from porosity 0.5 and particle diameter 0.1.
inline MmsResidualReport mms_residual_oracle(double chi, int n = 10000, physics::FluidProperties props = {1.0, 1.0}) {
  const auto coeffs = physics::darcy_forchheimer_from_porosity(0.5, 0.1);
  MmsResidualReport r;
  for (int i = 1; i <= n; ++i) {
    const double x = 2 * M_PI * halton(i, 2), y = 2 * M_PI * halton(i, 3);
    const auto jet = physics::mms_flow_jet(x, y, props.rho);
    const auto m = physics::momentum_residual(jet, props, coeffs, chi, physics::mms_forcing(x, y, props, coeffs, chi));
    r.momentum = std::max(r.momentum, std::hypot(m[0], m[1]));
    r.continuity = std::max(r.continuity, std::abs(physics::continuity_residual(jet.du)));
  }
  return r;
}

struct DerivativeReport {
  double first = 0.0;   // max relative error, first derivatives
  double second = 0.0;  // max relative error, pure second derivatives
  int checked = 0;      // points compared
  int skipped = 0;      // candidates whose stencil changes a max-pool owner
};

inline double fd_relative(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Spatial derivatives of a freshly initialized network at `n_points`
/// points of a `n_cloud` cloud, against central differences of the full
/// forward pass (the perturbed point also moves the pooled feature).
/// The network is only piecewise smooth across max-pool ownership changes,
/// so candidates whose stencil moves an owner are skipped and the next
/// candidate is used. Relative errors use a denominator floored at 1e-6.
inline DerivativeReport pipn_derivative_oracle(const models::PipnConfig& cfg, std::uint64_t seed, int n_points = 20,
                                               int n_cloud = 200) {
  const auto model = models::init_parameters(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> g(0.0, 1.0);
  models::CloudInput<double> in;
  in.coords.resize(n_cloud, cfg.dim);
  in.features = Eigen::MatrixXd::Zero(n_cloud, models::kPointFeatures);
  for (int i = 0; i < n_cloud; ++i) {
    for (int k = 0; k < cfg.dim; ++k) in.coords(i, k) = g(rng);
    in.features(i, 0) = 0.5 * g(rng);
    if (i % 4 == 3) in.features(i, 1 + (i / 4) % kBoundaryTypes) = 1.0;
  }
  in.n_deriv = std::min(n_cloud, 2 * n_points);
  ad::Tape<double> tape;
  const ad::BoundParameters<double> params(tape, model.values);
  const auto fwd = models::pipn_forward(tape, params, cfg, in);
  const auto& y = fwd.output;
  const Eigen::MatrixXd& jet = y.m.value();

  auto moved = [&](int j, int k, double delta) {
    auto m = in;
    m.n_deriv = 0;
    m.coords(j, k) += delta;
    return m;
  };
  auto owners = [&](const models::CloudInput<double>& m) {
    ad::Tape<double> t;
    const ad::BoundParameters<double> p(t, model.values);
    return models::pipn_forward(t, p, cfg, m).argmax;
  };
  auto values_at = [&](int j, int k, double delta) {
    return Eigen::RowVectorXd(models::pipn_predict(model, moved(j, k, delta)).row(j));
  };
  DerivativeReport r;
  const double h1 = 1e-5, h2 = 1e-3;
  for (int j = 0; j < in.n_deriv && r.checked < n_points; ++j) {
    bool smooth = true;
    for (int k = 0; k < cfg.dim && smooth; ++k) {
      smooth = owners(moved(j, k, 2 * h2)) == fwd.argmax && owners(moved(j, k, -2 * h2)) == fwd.argmax;
    }
    if (!smooth) {
      ++r.skipped;
      continue;
    }
    ++r.checked;
    const Eigen::RowVectorXd f0 = values_at(j, 0, 0.0);
    for (int k = 0; k < cfg.dim; ++k) {
      const Eigen::RowVectorXd first = (values_at(j, k, h1) - values_at(j, k, -h1)) / (2 * h1);
      const Eigen::RowVectorXd second = (-values_at(j, k, 2 * h2) + 16 * values_at(j, k, h2) - 30 * f0 +
                                         16 * values_at(j, k, -h2) - values_at(j, k, -2 * h2)) /
                                        (12 * h2 * h2);
      for (Eigen::Index c = 0; c < first.size(); ++c) {
        r.first = std::max(r.first, fd_relative(jet(y.layout.grad_row(k) + j, c), first(c), 1e-6));
        r.second = std::max(r.second, fd_relative(jet(y.layout.hess_row(k) + j, c), second(c), 1e-6));
      }
    }
  }
  if (r.checked < n_points) throw NumericalError("too few smooth points for the derivative check", "");
  return r;
}

/// 143-parameter network used by the gradient oracle.
inline models::PipnConfig tiny_pipn_config() {
  models::PipnConfig c;
  c.local_widths = {3};
  c.global_widths = {6};
  c.decoder_widths = {5, 3};
  c.activation = ad::Activation::tanh;
  return c;
}

struct GradientReport {
  Eigen::Index parameters = 0;
  int points = 0;
  double max_relative = 0.0;
};

/// Every parameter of the full four-term loss on a 16-point manufactured
/// case against fourth-order central differences. The denominator is
/// floored at 1e-6: entries that lose the max-pool have an exact zero
/// gradient and a difference quotient at roundoff level.
inline GradientReport loss_gradient_oracle(std::uint64_t seed) {
  const auto model = models::init_parameters(tiny_pipn_config(), seed);
  auto spec = dataset::mms_shape_family()[1];
  spec.scale = 0.8;
  dataset::MmsOptions o;
  o.interior = 10;
  o.boundary = 6;
  auto c = dataset::make_mms_case(spec, "oracle", seed + 1, o);
  dataset::select_observations(c, 5, seed + 2);
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  const auto pc = training::prepare_case(c, st);
  const training::LossWeights w{1, 1, 1, 1};
  const auto grad = training::batch_loss(model, {&pc}, st, w, {}, true).second;
  auto value_at = [&](std::size_t p, Eigen::Index e, double delta) {
    auto m = model;
    m.values.value(p).data()[e] += delta;
    return training::batch_loss(m, {&pc}, st, w, {}, false).first.total;
  };
  GradientReport r;
  r.parameters = model.values.count();
  r.points = c.size();
  const double h = 1e-4;
  for (std::size_t p = 0; p < model.values.size(); ++p) {
    for (Eigen::Index e = 0; e < model.values.value(p).size(); ++e) {
      const double fd =
          (-value_at(p, e, 2 * h) + 8 * value_at(p, e, h) - 8 * value_at(p, e, -h) + value_at(p, e, -2 * h)) / (12 * h);
      r.max_relative = std::max(r.max_relative, fd_relative(grad[p].data()[e], fd, 1e-6));
    }
  }
  return r;
}

/// Largest of |back - orig| / max(1, |orig|) over every normalized column
/// (coordinates, SDF, D, F, velocity, pressure) of MMS and duct cases.
inline double normalization_roundtrip_oracle(std::uint64_t seed) {
  dataset::MmsOptions mo;
  mo.interior = 120;
  mo.boundary = 40;
  auto cases = dataset::make_mms_cases(3, seed, mo);
  dataset::DuctOptions dopt;
  dopt.interior = 120;
  dopt.boundary = 40;
  auto ducts = dataset::make_duct_cases(2, seed + 1, dopt);
  for (auto& d : ducts) {
    FlowField f;
    f.u = d.coords.array().sin().matrix() * d.meta.inlet_speed;
    f.p = d.coords.col(0).array().cos().matrix() * 3.0;
    d.reference = std::move(f);
  }
  cases.insert(cases.end(), ducts.begin(), ducts.end());
  const auto st = dataset::compute_normalization(cases);
  double worst = 0.0;
  auto err = [&](const auto& a, const auto& b) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / std::max(1.0, std::abs(a.data()[i])));
    }
  };
  for (const auto& c : cases) {
    const auto back = dataset::denormalize_case(dataset::normalize_case(c, st), st);
    err(c.coords, back.coords);
    err(c.sdf, back.sdf);
    err(c.D, back.D);
    err(c.F, back.F);
    err(c.reference->u, back.reference->u);
    err(c.reference->p, back.reference->p);
  }
  return worst;
}

/// Residuals of a smooth field written in normalized variables, rescaled to
/// physical units, against the residuals of the same field differentiated
/// in physical variables. Returns the largest relative difference over
/// `trials` random scalings (chi alternating 0 and 1).
inline double residual_scaling_oracle(std::uint64_t seed, int trials = 100) {
  using D2 = ad::Dual2<double>;
  auto jet_of = [](auto&& field, const std::vector<double>& x) {
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
  };
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.2, 3.0), mean(-2.0, 2.0), amp(-1.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    physics::FieldScales sc{{mean(rng), mean(rng)}, {pos(rng), pos(rng)}, {mean(rng), mean(rng)},
                            {pos(rng), pos(rng)},   mean(rng),            pos(rng)};
    const physics::FluidProperties props{pos(rng), 0.1 * pos(rng)};
    const physics::PorousCoefficients coeffs{100 * pos(rng), pos(rng)};
    const double a = amp(rng), b = amp(rng), cc = amp(rng);
    auto normalized = [=](std::span<const D2> q) {
      return std::vector<D2>{sin(q[0] * a + q[1]) + q[1] * b, cos(q[0] - q[1] * cc) * q[0], exp(q[0] * 0.3) * q[1]};
    };
    auto physical = [=](std::span<const D2> x) {
      std::vector<D2> q{(x[0] - D2(sc.coord_mean[0])) / D2(sc.coord_std[0]),
                        (x[1] - D2(sc.coord_mean[1])) / D2(sc.coord_std[1])};
      auto v = normalized(std::span<const D2>(q));
      return std::vector<D2>{v[0] * sc.velocity_std[0] + sc.velocity_mean[0],
                             v[1] * sc.velocity_std[1] + sc.velocity_mean[1], v[2] * sc.pressure_std + sc.pressure_mean};
    };
    const physics::ResidualScaling rs(sc, props);
    const std::vector<double> xhat{amp(rng), amp(rng)};
    const std::vector<double> x{sc.coord_mean[0] + sc.coord_std[0] * xhat[0],
                                sc.coord_mean[1] + sc.coord_std[1] * xhat[1]};
    const double chi = t % 2;
    const std::vector<double> f{amp(rng), amp(rng)};
    const auto scaled = rs.residuals(jet_of(normalized, xhat), coeffs, chi, f);
    const auto pj = jet_of(physical, x);
    const auto phys_m = physics::momentum_residual(pj, props, coeffs, chi, f);
    worst = std::max(worst, rel(scaled.continuity * rs.continuity_factor(), physics::continuity_residual(pj.du)));
    for (int i = 0; i < 2; ++i) worst = std::max(worst, rel(scaled.momentum[i] * rs.momentum_factor(i), phys_m[i]));
  }
  return worst;
}

struct OracleLine {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass() const { return value < threshold; }
};

/// The full oracle suite.
inline std::vector<OracleLine> run_oracle_suite(std::uint64_t seed) {
  std::vector<OracleLine> out;
  for (double chi : {0.0, 1.0}) {
    const auto r = mms_residual_oracle(chi);
    const std::string tag = chi == 0.0 ? "chi=0" : "chi=1";
    out.push_back({"mms momentum residual (" + tag + ")", r.momentum, 1e-9});
    out.push_back({"mms continuity residual (" + tag + ")", r.continuity, 1e-12});
  }
  const auto d = pipn_derivative_oracle(models::PipnConfig{}, seed);
  const std::string pts = " (" + std::to_string(d.checked) + " points)";
  out.push_back({"pipn first derivatives vs central differences" + pts, d.first, 1e-5});
  out.push_back({"pipn second derivatives vs central differences" + pts, d.second, 1e-3});
  out.push_back({"normalization round trip", normalization_roundtrip_oracle(seed), 1e-12});
  out.push_back({"scaled vs physical residuals", residual_scaling_oracle(seed), 1e-10});
  const auto g = loss_gradient_oracle(seed);
  out.push_back({"loss parameter gradient vs central differences (" + std::to_string(g.parameters) + " parameters)",
                 g.max_relative, 1e-4});
  return out;
}

}  // namespace pipn::eval
