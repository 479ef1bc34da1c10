#pragma once

// Fixed-size point clouds of a rectangular duct with one porous inclusion.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"
#include "pipn/geometry/shapes.hpp"

namespace pipn::geometry {

enum class Side { left, right, bottom, top };

inline const char* to_string(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::bottom: return "bottom";
    case Side::top: return "top";
  }
  return "?";
}

inline Side side_from_string(const std::string& s) {
  for (auto v : {Side::left, Side::right, Side::bottom, Side::top}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigurationError("unknown duct side '" + s + "'");
}

/// Axis-aligned duct; the two sides that are neither inlet nor outlet are walls.
struct DomainSpec {
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  Side inlet = Side::left;
  Side outlet = Side::right;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  /// Extent across the main flow direction.
  double cross_extent() const {
    const bool horizontal = (inlet == Side::left || inlet == Side::right) && (outlet == Side::left || outlet == Side::right);
    const bool vertical = (inlet == Side::bottom || inlet == Side::top) && (outlet == Side::bottom || outlet == Side::top);
    if (horizontal) return height();
    if (vertical) return width();
    return std::min(width(), height());
  }

  BoundaryTag tag_of(Side s) const {
    if (s == inlet) return BoundaryTag::inlet;
    if (s == outlet) return BoundaryTag::outlet;
    return BoundaryTag::wall;
  }

  double side_length(Side s) const { return (s == Side::left || s == Side::right) ? height() : width(); }

  Vec2 point_on(Side s, double t) const {
    switch (s) {
      case Side::left: return {x_min, y_min + t * height()};
      case Side::right: return {x_max, y_min + t * height()};
      case Side::bottom: return {x_min + t * width(), y_min};
      case Side::top: return {x_min + t * width(), y_max};
    }
    return {x_min, y_min};
  }

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigurationError("duct extents must be positive");
    if (inlet == outlet) throw ConfigurationError("inlet and outlet must be different sides");
  }
};

struct SampleCounts {
  int interior = 0;
  int boundary = 0;
};

struct SamplerOptions {
  double near_weight = 0.4;         // share of interior points drawn near the interface
  double near_std_fraction = 0.05;  // Gaussian std as a fraction of the duct cross extent
  double interface_fraction = 0.25;  // share of boundary points on the interface
  long long max_attempts = 1000000;
};

/// Splits `total` over `weights` proportionally, rounding by largest remainder
/// (ties to the lower index).
inline std::vector<int> largest_remainder(const std::vector<double>& weights, int total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(sum > 0.0)) throw ConfigurationError("allocation weights must have a positive sum");
  std::vector<int> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i] / sum;
    out[i] = static_cast<int>(std::floor(exact));
    assigned += out[i];
    rem.emplace_back(exact - out[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < total - assigned; ++k) ++out[rem[static_cast<std::size_t>(k)].second];
  return out;
}

/// Arc-length sampler over the visible interface curve.
class InterfaceSampler {
 public:
  explicit InterfaceSampler(ShapePtr shape) : shape_(std::move(shape)) {
    composite_ = dynamic_cast<const Composite*>(shape_.get());
    if (composite_) {
      parts_ = composite_->members();
    } else {
      parts_ = {shape_};
    }
    for (const auto& part : parts_) {
      Table tb;
      tb.cum.push_back(0.0);
      Vec2 prev = part->point_at(0.0);
      for (int k = 1; k <= kSegments; ++k) {
        const Vec2 q = part->point_at(static_cast<double>(k) / kSegments);
        tb.cum.push_back(tb.cum.back() + (q - prev).norm());
        prev = q;
      }
      total_ += tb.cum.back();
      tables_.push_back(std::move(tb));
    }
  }

  /// Draws one curve point; returns false if it landed on a covered stretch.
  template <class Rng>
  bool draw(Rng& rng, Vec2& out) const {
    std::uniform_real_distribution<double> u(0.0, total_);
    double s = u(rng);
    std::size_t m = 0;
    while (m + 1 < tables_.size() && s >= tables_[m].cum.back()) {
      s -= tables_[m].cum.back();
      ++m;
    }
    const auto& cum = tables_[m].cum;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), s) - cum.begin());
    k = std::clamp<std::size_t>(k, 1, cum.size() - 1);
    const double seg = cum[k] - cum[k - 1];
    const double frac = seg > 0.0 ? (s - cum[k - 1]) / seg : 0.0;
    out = parts_[m]->point_at((static_cast<double>(k - 1) + frac) / kSegments);
    return !composite_ || composite_->visible(out, m);
  }

 private:
  static constexpr int kSegments = 4096;
  struct Table {
    std::vector<double> cum;
  };
  ShapePtr shape_;
  const Composite* composite_ = nullptr;
  std::vector<ShapePtr> parts_;
  std::vector<Table> tables_;
  double total_ = 0.0;
};

/// Samples interior and boundary points. Interior points mix uniform draws
/// over the duct with Gaussian draws around interface points; boundary
/// points go to the duct sides in proportion to their length, plus a fixed
/// share on the interface. Points are ordered interior first, then
/// boundary points grouped by side (inlet, outlet, walls) and the interface.
inline PointCloudCase sample_case(const DomainSpec& domain, const ShapeSpec& spec, SampleCounts counts,
                                  std::uint64_t seed, const SamplerOptions& opt = {}, CaseMeta meta = {}) {
  domain.validate();
  if (counts.interior <= 0 || counts.boundary <= 0) throw ConfigurationError("point counts must be positive");
  const double nominal = nominal_area(spec);
  if (!(nominal > 0.0) || !std::isfinite(nominal)) throw ConfigurationError("shape has zero area");
  if (opt.near_weight < 0.0 || opt.near_weight > 1.0) throw ConfigurationError("near_weight must lie in [0, 1]");
  if (opt.interface_fraction < 0.0 || opt.interface_fraction >= 1.0) {
    throw ConfigurationError("interface_fraction must lie in [0, 1)");
  }
  ShapePtr shape = build_shape(spec);
  const Box b = shape->bounds();
  if (!(b.lo.x() > domain.x_min && b.hi.x() < domain.x_max && b.lo.y() > domain.y_min && b.hi.y() < domain.y_max)) {
    throw ConfigurationError("shape does not fit strictly inside the duct");
  }
  meta.porous.validate();

  std::mt19937_64 rng(seed);
  long long attempts = 0;
  auto spend = [&]() {
    if (++attempts > opt.max_attempts) throw ConfigurationError("rejection sampling exceeded the attempt cap");
  };
  InterfaceSampler iface(shape);
  auto strictly_inside = [&](const Vec2& p) {
    return p.x() > domain.x_min && p.x() < domain.x_max && p.y() > domain.y_min && p.y() < domain.y_max;
  };

  const int n_near = static_cast<int>(std::llround(opt.near_weight * counts.interior));
  const double sigma = opt.near_std_fraction * domain.cross_extent();
  std::uniform_real_distribution<double> ux(domain.x_min, domain.x_max), uy(domain.y_min, domain.y_max);
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<Vec2> interior;
  interior.reserve(static_cast<std::size_t>(counts.interior));
  for (int i = 0; i < counts.interior; ++i) {
    Vec2 p;
    if (i < n_near) {
      for (;;) {
        spend();
        Vec2 c;
        if (!iface.draw(rng, c)) continue;
        p = c + Vec2(gauss(rng), gauss(rng));
        if (strictly_inside(p)) break;
      }
    } else {
      for (;;) {
        spend();
        p = Vec2(ux(rng), uy(rng));
        if (strictly_inside(p)) break;
      }
    }
    interior.push_back(p);
  }
  std::shuffle(interior.begin(), interior.end(), rng);

  const int n_iface = static_cast<int>(std::llround(opt.interface_fraction * counts.boundary));
  const std::vector<Side> sides{domain.inlet, domain.outlet};
  std::vector<Side> ordered = sides;
  for (auto s : {Side::left, Side::right, Side::bottom, Side::top}) {
    if (s != domain.inlet && s != domain.outlet) ordered.push_back(s);
  }
  std::vector<double> lengths;
  for (auto s : ordered) lengths.push_back(domain.side_length(s));
  const auto per_side = largest_remainder(lengths, counts.boundary - n_iface);

  const int n = counts.interior + counts.boundary;
  PointCloudCase c;
  c.dim = 2;
  c.coords.resize(n, 2);
  c.chi.setZero(n);
  c.sdf.resize(n);
  c.onehot.setZero(n, kBoundaryTypes);
  c.D.setZero(n);
  c.F.setZero(n);
  int row = 0;
  for (const auto& p : interior) {
    c.coords.row(row) = p.transpose();
    c.sdf(row) = shape->signed_distance(p);
    c.chi(row) = c.sdf(row) < 0.0 ? 1.0 : 0.0;
    ++row;
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t s = 0; s < ordered.size(); ++s) {
    const BoundaryTag tag = domain.tag_of(ordered[s]);
    for (int k = 0; k < per_side[s]; ++k) {
      spend();
      const Vec2 p = domain.point_on(ordered[s], u01(rng));
      c.coords.row(row) = p.transpose();
      c.sdf(row) = shape->signed_distance(p);
      c.onehot(row, static_cast<int>(tag)) = 1.0;
      ++row;
    }
  }
  for (int k = 0; k < n_iface; ++k) {
    Vec2 p;
    do {
      spend();
    } while (!iface.draw(rng, p));
    c.coords.row(row) = p.transpose();
    c.sdf(row) = shape->signed_distance(p);
    if (std::abs(c.sdf(row)) > kInterfaceTolerance) throw NumericalError("interface point off the curve", "sampler");
    c.chi(row) = 1.0;
    c.onehot(row, static_cast<int>(BoundaryTag::interface)) = 1.0;
    ++row;
  }
  for (int i = 0; i < n; ++i) {
    if (c.chi(i) == 1.0) {
      c.D(i) = meta.porous.D;
      c.F(i) = meta.porous.F;
    }
  }
  c.meta = std::move(meta);
  return c;
}

}  // namespace pipn::geometry
