#pragma once

// Porous inclusions in the plane: circles, regular polygons, ellipses and
// unions of those, with exact signed distances.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "pipn/errors.hpp"

namespace pipn::geometry {

using Vec2 = Eigen::Vector2d;

enum class Primitive { circle, polygon, ellipse, composite };

inline const char* to_string(Primitive p) {
  switch (p) {
    case Primitive::circle: return "circle";
    case Primitive::polygon: return "polygon";
    case Primitive::ellipse: return "ellipse";
    case Primitive::composite: return "composite";
  }
  return "?";
}

inline Primitive primitive_from_string(const std::string& s) {
  for (auto p : {Primitive::circle, Primitive::polygon, Primitive::ellipse, Primitive::composite}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigurationError("unknown shape primitive '" + s + "'");
}

/// Unit primitive (radius / circumradius / semi-major axis 1 at the origin,
/// polygon vertex at (1, 0)) placed by x -> R(rotation) (scale x) + center +
/// translation. Composite members are placed first, then the composite's own
/// transform is applied to all of them.
struct ShapeSpec {
  Primitive primitive = Primitive::circle;
  int sides = 4;        // polygon only
  double aspect = 1.0;  // ellipse: semi-minor / semi-major
  Vec2 center = Vec2::Zero();
  double scale = 1.0;
  double rotation = 0.0;
  Vec2 translation = Vec2::Zero();
  std::vector<ShapeSpec> members;  // composite only
};

/// Area implied by the ShapeSpec (members of a union may overlap, so composites
/// report the largest member area as a lower bound).
inline double nominal_area(const ShapeSpec& s) {
  const double s2 = s.scale * s.scale;
  switch (s.primitive) {
    case Primitive::circle: return std::numbers::pi * s2;
    case Primitive::ellipse: return std::numbers::pi * s2 * s.aspect;
    case Primitive::polygon:
      return 0.5 * s.sides * s2 * std::sin(2.0 * std::numbers::pi / std::max(s.sides, 1));
    case Primitive::composite: {
      double a = 0.0;
      for (const auto& m : s.members) a = std::max(a, nominal_area(m));
      return a * s2;
    }
  }
  return 0.0;
}

/// Rigid-plus-scale placement.
struct Placement {
  double scale = 1.0;
  double rotation = 0.0;
  Vec2 offset = Vec2::Zero();

  Vec2 apply(const Vec2& p) const { return Eigen::Rotation2Dd(rotation) * (scale * p) + offset; }

  /// this after inner.
  Placement compose(const Placement& inner) const {
    return {scale * inner.scale, rotation + inner.rotation, apply(inner.offset)};
  }
};

inline Placement placement_of(const ShapeSpec& s) { return {s.scale, s.rotation, s.center + s.translation}; }

/// Axis-aligned bounding box.
struct Box {
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
  Vec2 hi = Vec2::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Box& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
};

class Shape {
 public:
  virtual ~Shape() = default;

  /// Negative inside, positive outside, zero on the curve.
  virtual double signed_distance(const Vec2& p) const = 0;
  virtual bool contains(const Vec2& p) const { return signed_distance(p) < 0.0; }
  /// Nearest point on the curve.
  virtual Vec2 closest_point(const Vec2& p) const = 0;
  /// Closed-curve parametrization, t in [0, 1).
  virtual Vec2 point_at(double t) const = 0;
  virtual Box bounds() const = 0;
  virtual double area() const = 0;
  /// Points whose pairwise distances contain the diameter.
  virtual std::vector<Vec2> extreme_points() const = 0;

  double diameter() const {
    const auto pts = extreme_points();
    double d = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).norm());
    }
    return d;
  }
};

using ShapePtr = std::shared_ptr<const Shape>;

class Circle final : public Shape {
 public:
  Circle(Vec2 c, double r) : c_(std::move(c)), r_(r) {}

  double signed_distance(const Vec2& p) const override { return (p - c_).norm() - r_; }

  Vec2 closest_point(const Vec2& p) const override {
    const Vec2 d = p - c_;
    const double n = d.norm();
    if (n == 0.0) return c_ + Vec2(r_, 0.0);
    return c_ + d * (r_ / n);
  }

  Vec2 point_at(double t) const override {
    const double a = 2.0 * std::numbers::pi * t;
    return c_ + r_ * Vec2(std::cos(a), std::sin(a));
  }

  Box bounds() const override { return {c_.array() - r_, c_.array() + r_}; }
  double area() const override { return std::numbers::pi * r_ * r_; }

  std::vector<Vec2> extreme_points() const override {
    std::vector<Vec2> pts;
    for (int i = 0; i < 360; ++i) pts.push_back(point_at(i / 360.0));
    return pts;
  }

  const Vec2& center() const { return c_; }
  double radius() const { return r_; }

 private:
  Vec2 c_;
  double r_;
};

/// Simple polygon given by counter-clockwise vertices.
class Polygon final : public Shape {
 public:
  explicit Polygon(std::vector<Vec2> v) : v_(std::move(v)) {
    if (v_.size() < 3) throw DomainError("polygon needs at least 3 vertices");
    for (std::size_t i = 0; i < v_.size(); ++i) {
      const double len = (v_[(i + 1) % v_.size()] - v_[i]).norm();
      cum_.push_back(perimeter_);
      perimeter_ += len;
    }
  }

  double signed_distance(const Vec2& p) const override {
    double best = std::numeric_limits<double>::infinity();
    bool inside = false;
    const std::size_t n = v_.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      best = std::min(best, (p - segment_closest(v_[j], v_[i], p)).squaredNorm());
      const Vec2& a = v_[i];
      const Vec2& b = v_[j];
      if ((a.y() > p.y()) != (b.y() > p.y()) && p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x()) {
        inside = !inside;
      }
    }
    const double d = std::sqrt(best);
    return inside ? -d : d;
  }

  Vec2 closest_point(const Vec2& p) const override {
    Vec2 best_pt = v_[0];
    double best = std::numeric_limits<double>::infinity();
    const std::size_t n = v_.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 q = segment_closest(v_[i], v_[(i + 1) % n], p);
      const double d = (p - q).squaredNorm();
      if (d < best) {
        best = d;
        best_pt = q;
      }
    }
    return best_pt;
  }

  Vec2 point_at(double t) const override {
    double s = (t - std::floor(t)) * perimeter_;
    const std::size_t n = v_.size();
    std::size_t i = static_cast<std::size_t>(std::upper_bound(cum_.begin(), cum_.end(), s) - cum_.begin()) - 1;
    i = std::min(i, n - 1);
    const Vec2& a = v_[i];
    const Vec2& b = v_[(i + 1) % n];
    const double len = (b - a).norm();
    return len > 0.0 ? Vec2(a + (b - a) * ((s - cum_[i]) / len)) : a;
  }

  Box bounds() const override {
    Box b;
    for (const auto& v : v_) b.expand({v, v});
    return b;
  }

  double area() const override {
    double a = 0.0;
    for (std::size_t i = 0; i < v_.size(); ++i) {
      const Vec2& p = v_[i];
      const Vec2& q = v_[(i + 1) % v_.size()];
      a += p.x() * q.y() - q.x() * p.y();
    }
    return 0.5 * std::abs(a);
  }

  std::vector<Vec2> extreme_points() const override { return v_; }
  const std::vector<Vec2>& vertices() const { return v_; }

  static Vec2 segment_closest(const Vec2& a, const Vec2& b, const Vec2& p) {
    const Vec2 ab = b - a;
    const double l2 = ab.squaredNorm();
    if (l2 == 0.0) return a;
    const double t = std::clamp((p - a).dot(ab) / l2, 0.0, 1.0);
    return a + t * ab;
  }

 private:
  std::vector<Vec2> v_;
  std::vector<double> cum_;
  double perimeter_ = 0.0;
};

namespace detail {

// Root of (r0 z0 / (s + r0))^2 + (z1 / (s + 1))^2 - 1 by bisection.
inline double ellipse_root(double r0, double z0, double z1, double g) {
  const double n0 = r0 * z0;
  double s0 = z1 - 1.0;
  double s1 = g < 0.0 ? 0.0 : std::hypot(n0, z1) - 1.0;
  double s = 0.0;
  for (int i = 0; i < 1100; ++i) {
    s = 0.5 * (s0 + s1);
    if (s == s0 || s == s1) break;
    const double a = n0 / (s + r0);
    const double b = z1 / (s + 1.0);
    const double gv = a * a + b * b - 1.0;
    if (gv > 0.0) {
      s0 = s;
    } else if (gv < 0.0) {
      s1 = s;
    } else {
      break;
    }
  }
  return s;
}

// Closest point on the axis-aligned ellipse (x/e0)^2 + (y/e1)^2 = 1 with
// e0 >= e1 > 0, for a query in the closed first quadrant.
inline Vec2 ellipse_closest_quadrant(double e0, double e1, double y0, double y1) {
  if (y1 > 0.0) {
    if (y0 > 0.0) {
      const double z0 = y0 / e0;
      const double z1 = y1 / e1;
      const double g = z0 * z0 + z1 * z1 - 1.0;
      if (g == 0.0) return {y0, y1};
      const double r0 = (e0 / e1) * (e0 / e1);
      const double sbar = ellipse_root(r0, z0, z1, g);
      return {r0 * y0 / (sbar + r0), y1 / (sbar + 1.0)};
    }
    return {0.0, e1};
  }
  const double numer = e0 * y0;
  const double denom = e0 * e0 - e1 * e1;
  if (numer < denom) {
    const double xde = numer / denom;
    return {e0 * xde, e1 * std::sqrt(std::max(0.0, 1.0 - xde * xde))};
  }
  return {e0, 0.0};
}

}  // namespace detail

class Ellipse final : public Shape {
 public:
  Ellipse(Vec2 c, double a, double b, double rotation) : c_(std::move(c)), a_(a), b_(b), rot_(rotation) {}

  double signed_distance(const Vec2& p) const override {
    const Vec2 q = closest_point(p);
    const double d = (p - q).norm();
    const Vec2 l = to_local(p);
    const double f = (l.x() / a_) * (l.x() / a_) + (l.y() / b_) * (l.y() / b_);
    return f < 1.0 ? -d : d;
  }

  Vec2 closest_point(const Vec2& p) const override {
    const Vec2 l = to_local(p);
    const bool swap = a_ < b_;
    const double e0 = swap ? b_ : a_;
    const double e1 = swap ? a_ : b_;
    const double y0 = std::abs(swap ? l.y() : l.x());
    const double y1 = std::abs(swap ? l.x() : l.y());
    Vec2 q = detail::ellipse_closest_quadrant(e0, e1, y0, y1);
    if (swap) std::swap(q.x(), q.y());
    q.x() = std::copysign(q.x(), l.x());
    q.y() = std::copysign(q.y(), l.y());
    return Eigen::Rotation2Dd(rot_) * q + c_;
  }

  Vec2 point_at(double t) const override {
    const double th = 2.0 * std::numbers::pi * t;
    return Eigen::Rotation2Dd(rot_) * Vec2(a_ * std::cos(th), b_ * std::sin(th)) + c_;
  }

  Box bounds() const override {
    const double c = std::cos(rot_), s = std::sin(rot_);
    const Vec2 h(std::sqrt(a_ * a_ * c * c + b_ * b_ * s * s), std::sqrt(a_ * a_ * s * s + b_ * b_ * c * c));
    return {c_ - h, c_ + h};
  }

  double area() const override { return std::numbers::pi * a_ * b_; }

  std::vector<Vec2> extreme_points() const override {
    std::vector<Vec2> pts;
    for (int i = 0; i < 360; ++i) pts.push_back(point_at(i / 360.0));
    return pts;
  }

 private:
  Vec2 to_local(const Vec2& p) const { return Eigen::Rotation2Dd(-rot_) * (p - c_); }

  Vec2 c_;
  double a_, b_, rot_;
};

/// Union of shapes. Outside, the distance is the smallest member distance;
/// inside, it is the exact distance to the visible part of the member
/// curves (the part not covered by another member).
class Composite final : public Shape {
 public:
  explicit Composite(std::vector<ShapePtr> members) : m_(std::move(members)) {
    if (m_.size() < 2) throw DomainError("composite shape needs at least 2 members");
    build_tables();
  }

  double signed_distance(const Vec2& p) const override {
    double outside = std::numeric_limits<double>::infinity();
    double depth = -1.0;
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double s = m_[i]->signed_distance(p);
      if (s < 0.0) {
        if (-s > depth) {
          depth = -s;
          deepest = i;
        }
      } else {
        outside = std::min(outside, s);
      }
    }
    if (depth < 0.0) return outside;
    // The deepest member's nearest point bounds the distance from below and
    // attains it whenever no other member covers it.
    const Vec2 c = m_[deepest]->closest_point(p);
    if (visible(c, deepest)) return -depth;
    return -hidden_distance(p);
  }

  Vec2 closest_point(const Vec2& p) const override {
    Vec2 best_pt = p;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const Vec2 c = m_[i]->closest_point(p);
      if (visible(c, i) && (c - p).norm() < best) {
        best = (c - p).norm();
        best_pt = c;
      }
    }
    const auto [d, q] = search_visible(p);
    if (d < best) best_pt = q;
    return best_pt;
  }

  /// Parametrizes the members one after another (covered stretches included).
  Vec2 point_at(double t) const override {
    const double u = (t - std::floor(t)) * static_cast<double>(m_.size());
    const std::size_t i = std::min(static_cast<std::size_t>(u), m_.size() - 1);
    return m_[i]->point_at(u - static_cast<double>(i));
  }

  Box bounds() const override {
    Box b;
    for (const auto& m : m_) b.expand(m->bounds());
    return b;
  }

  /// Largest member area (lower bound of the union area).
  double area() const override {
    double a = 0.0;
    for (const auto& m : m_) a = std::max(a, m->area());
    return a;
  }

  std::vector<Vec2> extreme_points() const override {
    std::vector<Vec2> pts;
    for (const auto& m : m_) {
      for (const auto& p : m->extreme_points()) pts.push_back(p);
    }
    return pts;
  }

  const std::vector<ShapePtr>& members() const { return m_; }

  /// True if `p` (on member `owner`) is not strictly inside another member.
  bool visible(const Vec2& p, std::size_t owner) const {
    for (std::size_t j = 0; j < m_.size(); ++j) {
      if (j != owner && m_[j]->signed_distance(p) < 0.0) return false;
    }
    return true;
  }

 private:
  static constexpr int kSamples = 2048;

  struct Table {
    std::vector<double> t;
    std::vector<Vec2> pt;
    std::vector<char> vis;
    std::vector<Vec2> crossings;  // where visibility changes
  };

  void build_tables() {
    tables_.resize(m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) {
      Table& tb = tables_[i];
      for (int k = 0; k < kSamples; ++k) {
        const double t = static_cast<double>(k) / kSamples;
        tb.t.push_back(t);
        tb.pt.push_back(m_[i]->point_at(t));
        tb.vis.push_back(visible(tb.pt.back(), i) ? 1 : 0);
      }
      for (int k = 0; k < kSamples; ++k) {
        const int k1 = (k + 1) % kSamples;
        if (tb.vis[static_cast<std::size_t>(k)] == tb.vis[static_cast<std::size_t>(k1)]) continue;
        double lo = tb.t[static_cast<std::size_t>(k)];
        double hi = k1 == 0 ? 1.0 : tb.t[static_cast<std::size_t>(k1)];
        const bool lo_vis = tb.vis[static_cast<std::size_t>(k)] != 0;
        for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (visible(m_[i]->point_at(mid), i) == lo_vis) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        tb.crossings.push_back(m_[i]->point_at(0.5 * (lo + hi)));
      }
    }
  }

  // Nearest visible curve point by dense search, local refinement and the
  // visibility crossings.
  std::pair<double, Vec2> search_visible(const Vec2& p) const {
    double best = std::numeric_limits<double>::infinity();
    Vec2 best_pt = p;
    auto consider = [&](const Vec2& q) {
      const double d = (q - p).norm();
      if (d < best) {
        best = d;
        best_pt = q;
      }
    };
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const Table& tb = tables_[i];
      for (const auto& q : tb.crossings) consider(q);
      int arg = -1;
      double local = std::numeric_limits<double>::infinity();
      for (int k = 0; k < kSamples; ++k) {
        if (!tb.vis[static_cast<std::size_t>(k)]) continue;
        const double d = (tb.pt[static_cast<std::size_t>(k)] - p).squaredNorm();
        if (d < local) {
          local = d;
          arg = k;
        }
      }
      if (arg < 0) continue;
      consider(tb.pt[static_cast<std::size_t>(arg)]);
      // Golden-section search over the two neighbouring sample intervals.
      const double h = 1.0 / kSamples;
      double a = tb.t[static_cast<std::size_t>(arg)] - h;
      double b = tb.t[static_cast<std::size_t>(arg)] + h;
      auto f = [&](double t) { return (m_[i]->point_at(t) - p).squaredNorm(); };
      const double g = 0.5 * (std::sqrt(5.0) - 1.0);
      double x1 = b - g * (b - a), x2 = a + g * (b - a);
      double f1 = f(x1), f2 = f(x2);
      for (int it = 0; it < 100 && b - a > 1e-15; ++it) {
        if (f1 < f2) {
          b = x2;
          x2 = x1;
          f2 = f1;
          x1 = b - g * (b - a);
          f1 = f(x1);
        } else {
          a = x1;
          x1 = x2;
          f1 = f2;
          x2 = a + g * (b - a);
          f2 = f(x2);
        }
      }
      const Vec2 q = m_[i]->point_at(0.5 * (a + b));
      if (visible(q, i)) consider(q);
    }
    return {best, best_pt};
  }

  double hidden_distance(const Vec2& p) const { return search_visible(p).first; }

  std::vector<ShapePtr> m_;
  std::vector<Table> tables_;
};

/// Builds the curve for a spec. Throws DomainError on degenerate input.
inline ShapePtr build_shape(const ShapeSpec& spec, const Placement& outer = {}) {
  if (!(spec.scale > 0.0) || !std::isfinite(spec.scale)) throw DomainError("shape scale must be positive");
  const Placement pl = outer.compose(placement_of(spec));
  switch (spec.primitive) {
    case Primitive::circle: return std::make_shared<Circle>(pl.apply(Vec2::Zero()), pl.scale);
    case Primitive::ellipse:
      if (!(spec.aspect > 0.0)) throw DomainError("ellipse aspect must be positive");
      return std::make_shared<Ellipse>(pl.apply(Vec2::Zero()), pl.scale, pl.scale * spec.aspect, pl.rotation);
    case Primitive::polygon: {
      if (spec.sides < 3 || spec.sides > 8) throw DomainError("regular polygon needs 3 to 8 sides");
      std::vector<Vec2> v;
      for (int k = 0; k < spec.sides; ++k) {
        const double a = 2.0 * std::numbers::pi * k / spec.sides;
        v.push_back(pl.apply(Vec2(std::cos(a), std::sin(a))));
      }
      return std::make_shared<Polygon>(std::move(v));
    }
    case Primitive::composite: {
      if (spec.members.size() < 2) throw DomainError("composite shape needs at least 2 members");
      std::vector<ShapePtr> parts;
      for (const auto& m : spec.members) parts.push_back(build_shape(m, pl));
      return std::make_shared<Composite>(std::move(parts));
    }
  }
  throw DomainError("unknown primitive");
}

inline double signed_distance(const Shape& shape, const Vec2& p) { return shape.signed_distance(p); }

/// phi = N_p / N.
inline double porosity_from_counts(long long n_porous, long long n_total) {
  if (n_total <= 0) throw DomainError("porosity: total count must be positive");
  if (n_porous <= 0 || n_porous > n_total) throw DomainError("porosity: porous count must lie in (0, total]");
  return static_cast<double>(n_porous) / static_cast<double>(n_total);
}

}  // namespace pipn::geometry
