#pragma once

// Synthetic case families: manufactured-solution cases on [0, pi]^2 with a
// porous obstacle, and parametric 2D porous ducts without reference fields.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"
#include "pipn/geometry/sampling.hpp"
#include "pipn/geometry/shapes.hpp"
#include "pipn/physics/equations.hpp"

namespace pipn::dataset {

struct MmsOptions {
  int interior = 667;
  int boundary = 168;
  double rho = 1.0;
  double mu = 0.05;
  double porosity = 0.8;
  double particle_diameter = 0.5;
  double min_scale = 0.7;
  double max_scale = 0.9;
  geometry::SamplerOptions sampler;
};

inline geometry::DomainSpec mms_domain() { return {0.0, M_PI, 0.0, M_PI}; }

/// The six training primitives: circle, triangle, square, pentagon, hexagon
/// and ellipse, centred in the domain.
inline std::vector<geometry::ShapeSpec> mms_shape_family() {
  using geometry::Primitive;
  std::vector<geometry::ShapeSpec> out;
  const geometry::Vec2 c(M_PI / 2, M_PI / 2);
  geometry::ShapeSpec s;
  s.center = c;
  s.primitive = Primitive::circle;
  out.push_back(s);
  for (int sides : {3, 4, 5, 6}) {
    s.primitive = Primitive::polygon;
    s.sides = sides;
    out.push_back(s);
  }
  s.primitive = Primitive::ellipse;
  s.aspect = 0.6;
  out.push_back(s);
  return out;
}

/// Union of a circle and a rotated square, offset from each other; none of
/// the training primitives has this outline.
inline geometry::ShapeSpec mms_unseen_composite() {
  using geometry::Primitive;
  geometry::ShapeSpec circle;
  circle.primitive = Primitive::circle;
  circle.center = {-0.35, -0.2};
  circle.scale = 0.55;
  geometry::ShapeSpec square;
  square.primitive = Primitive::polygon;
  square.sides = 4;
  square.center = {0.35, 0.25};
  square.scale = 0.55;
  square.rotation = 0.3;
  geometry::ShapeSpec u;
  u.primitive = Primitive::composite;
  u.center = {M_PI / 2, M_PI / 2};
  u.members = {circle, square};
  return u;
}

inline CaseMeta mms_meta(const std::string& id, const MmsOptions& opt) {
  CaseMeta meta;
  meta.case_id = id;
  meta.provenance = "mms";
  meta.inlet_speed = 1.0;
  meta.fluid = {opt.rho, opt.mu};
  meta.porous = physics::darcy_forchheimer_from_porosity(opt.porosity, opt.particle_diameter);
  meta.forcing = "mms";
  return meta;
}

/// Fills the reference with the manufactured fields.
inline void attach_mms_reference(PointCloudCase& c) {
  FlowField f;
  f.u.resize(c.size(), 2);
  f.p.resize(c.size());
  for (int i = 0; i < c.size(); ++i) {
    const auto s = physics::mms_exact(c.coords(i, 0), c.coords(i, 1), c.meta.fluid.rho);
    f.u(i, 0) = s.ux;
    f.u(i, 1) = s.uy;
    f.p(i) = s.p;
  }
  c.reference = std::move(f);
}

inline PointCloudCase make_mms_case(const geometry::ShapeSpec& spec, const std::string& id, std::uint64_t seed,
                                    const MmsOptions& opt = {}) {
  PointCloudCase c = geometry::sample_case(mms_domain(), spec, {opt.interior, opt.boundary}, seed, opt.sampler,
                                           mms_meta(id, opt));
  attach_mms_reference(c);
  return c;
}

/// `n` cases cycling through the training family with seeded scale and
/// rotation. Case k is named mms_<k> and sampled with a seed derived from
/// (seed, k).
inline std::vector<PointCloudCase> make_mms_cases(int n, std::uint64_t seed, const MmsOptions& opt = {}) {
  if (n <= 0) throw ConfigurationError("case count must be positive");
  if (!(opt.min_scale > 0.0) || opt.max_scale < opt.min_scale) throw ConfigurationError("bad shape scale range");
  const auto family = mms_shape_family();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> scale(opt.min_scale, opt.max_scale), rot(0.0, 2.0 * M_PI);
  std::vector<PointCloudCase> out;
  for (int k = 0; k < n; ++k) {
    geometry::ShapeSpec s = family[static_cast<std::size_t>(k) % family.size()];
    s.scale = scale(rng);
    s.rotation = s.primitive == geometry::Primitive::circle ? 0.0 : rot(rng);
    const std::uint64_t case_seed = rng();
    out.push_back(make_mms_case(s, "mms_" + std::to_string(k), case_seed, opt));
  }
  return out;
}

struct DuctOptions {
  double length = 2.0;
  double height = 1.0;
  int interior = 1000;
  int boundary = 200;
  double rho = 1.0;
  double mu = 1e-3;
  double min_speed = 0.5, max_speed = 1.5;
  double max_angle = 0.0;  // inlet angle drawn in [-max_angle, max_angle]
  std::vector<double> darcy{1000.0, 2000.0, 5000.0, 10000.0, 14000.0};
  double forchheimer = 10.0;
  geometry::SamplerOptions sampler;
};

/// Parametric ducts: a random primitive (circle, polygon of 3 to 8 sides or
/// ellipse) in the middle third of the channel, inlet speed and angle and
/// Darcy coefficient drawn per case.
inline std::vector<PointCloudCase> make_duct_cases(int n, std::uint64_t seed, const DuctOptions& opt = {}) {
  if (n <= 0) throw ConfigurationError("case count must be positive");
  if (opt.darcy.empty()) throw ConfigurationError("at least one Darcy coefficient is needed");
  if (!(opt.length > 0.0) || !(opt.height > 0.0)) throw ConfigurationError("duct extents must be positive");
  const geometry::DomainSpec dom{0.0, opt.length, 0.0, opt.height};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<PointCloudCase> out;
  for (int k = 0; k < n; ++k) {
    geometry::ShapeSpec s;
    const int kind = static_cast<int>(rng() % 3);
    s.primitive = kind == 0 ? geometry::Primitive::circle
                            : (kind == 1 ? geometry::Primitive::polygon : geometry::Primitive::ellipse);
    s.sides = 3 + static_cast<int>(rng() % 6);
    s.aspect = 0.5 + 0.4 * u01(rng);
    s.scale = opt.height * (0.15 + 0.15 * u01(rng));
    s.rotation = 2.0 * M_PI * u01(rng);
    s.center = {opt.length * (1.0 / 3.0 + u01(rng) / 3.0), opt.height * (0.4 + 0.2 * u01(rng))};
    CaseMeta meta;
    meta.case_id = "duct_" + std::to_string(k);
    meta.provenance = "duct";
    meta.fluid = {opt.rho, opt.mu};
    meta.inlet_speed = opt.min_speed + (opt.max_speed - opt.min_speed) * u01(rng);
    meta.inlet_angle = opt.max_angle * (2.0 * u01(rng) - 1.0);
    meta.porous = {opt.darcy[rng() % opt.darcy.size()], opt.forchheimer};
    const std::uint64_t case_seed = rng();
    out.push_back(geometry::sample_case(dom, s, {opt.interior, opt.boundary}, case_seed, opt.sampler, meta));
  }
  return out;
}

}  // namespace pipn::dataset
