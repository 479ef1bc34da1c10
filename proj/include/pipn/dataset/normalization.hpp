#pragma once

// Z-score statistics for coordinates, sdf, velocity and pressure; min-max
// ranges for the porous coefficients.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipn/dataset/point_cloud.hpp"
#include "pipn/dataset/split.hpp"
#include "pipn/errors.hpp"
#include "pipn/physics/equations.hpp"

namespace pipn::dataset {

inline constexpr double kStdFloor = 1e-12;

struct FeatureStat {
  double mean = 0.0;
  double std = 1.0;
  bool constant = false;

  double forward(double v) const { return (v - mean) / std; }
  double inverse(double z) const { return mean + std * z; }
  bool operator==(const FeatureStat&) const = default;
};

/// Affine map of [min, max] onto [0, 1]; values outside pass through linearly.
struct RangeStat {
  double min = 0.0;
  double max = 1.0;
  bool constant = false;

  double span() const { return constant ? 1.0 : max - min; }
  double forward(double v) const { return (v - min) / span(); }
  double inverse(double z) const { return min + span() * z; }
  bool operator==(const RangeStat&) const = default;
};

struct NormalizationStats {
  int dim = 2;
  std::vector<FeatureStat> coords;
  FeatureStat sdf;
  std::vector<FeatureStat> velocity;
  FeatureStat pressure;
  RangeStat D, F;
  double eps = kStdFloor;
  /// True when velocity/pressure statistics come from inlet scales rather
  /// than reference fields.
  bool fields_estimated = false;

  bool complete() const {
    return static_cast<int>(coords.size()) == dim && static_cast<int>(velocity.size()) == dim;
  }

  physics::FieldScales field_scales() const {
    physics::FieldScales s;
    for (int k = 0; k < dim; ++k) {
      s.coord_mean.push_back(coords[static_cast<std::size_t>(k)].mean);
      s.coord_std.push_back(coords[static_cast<std::size_t>(k)].std);
      s.velocity_mean.push_back(velocity[static_cast<std::size_t>(k)].mean);
      s.velocity_std.push_back(velocity[static_cast<std::size_t>(k)].std);
    }
    s.pressure_mean = pressure.mean;
    s.pressure_std = pressure.std;
    return s;
  }

  bool operator==(const NormalizationStats&) const = default;
};

namespace detail {

// Two-pass population statistics of the concatenated columns.
inline FeatureStat column_stat(const std::vector<const Eigen::VectorXd*>& cols, double eps) {
  double sum = 0.0;
  long long n = 0;
  for (const auto* c : cols) {
    sum += c->sum();
    n += c->size();
  }
  if (n == 0) throw ConfigurationError("no values to normalize");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto* c : cols) ss += (c->array() - mean).square().sum();
  const double sd = std::sqrt(ss / static_cast<double>(n));
  FeatureStat s{mean, sd, false};
  if (!(sd >= eps)) {
    s.std = eps;
    s.constant = true;
  }
  return s;
}

inline RangeStat range_of(const std::vector<double>& v, double eps) {
  RangeStat r{*std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end()), false};
  if (!(r.max - r.min >= eps)) r.constant = true;
  return r;
}

}  // namespace detail

/// Statistics over every point of the given (training) cases.
inline NormalizationStats compute_normalization(const std::vector<const PointCloudCase*>& cases,
                                                double eps = kStdFloor) {
  if (cases.empty()) throw ConfigurationError("compute_normalization: no cases");
  NormalizationStats st;
  st.dim = cases.front()->dim;
  st.eps = eps;
  for (const auto* c : cases) {
    if (c->dim != st.dim) throw ConfigurationError("compute_normalization: mixed dimensions");
  }
  std::vector<Eigen::VectorXd> store;
  store.reserve(cases.size() * static_cast<std::size_t>(2 * st.dim + 2));
  auto gather = [&](auto&& pick) {
    std::vector<const Eigen::VectorXd*> cols;
    for (const auto* c : cases) {
      store.push_back(pick(*c));
      cols.push_back(&store.back());
    }
    return cols;
  };
  for (int k = 0; k < st.dim; ++k) {
    st.coords.push_back(detail::column_stat(gather([k](const PointCloudCase& c) -> Eigen::VectorXd { return c.coords.col(k); }), eps));
  }
  st.sdf = detail::column_stat(gather([](const PointCloudCase& c) -> Eigen::VectorXd { return c.sdf; }), eps);

  const bool all_ref = std::all_of(cases.begin(), cases.end(), [](const auto* c) { return c->reference.has_value(); });
  if (all_ref) {
    for (int k = 0; k < st.dim; ++k) {
      st.velocity.push_back(detail::column_stat(
          gather([k](const PointCloudCase& c) -> Eigen::VectorXd { return c.reference->u.col(k); }), eps));
    }
    st.pressure =
        detail::column_stat(gather([](const PointCloudCase& c) -> Eigen::VectorXd { return c.reference->p; }), eps);
  } else {
    // Inlet scales: zero mean, std = largest inlet speed, pressure std = rho U^2.
    double u = 0.0, q = 0.0;
    for (const auto* c : cases) {
      u = std::max(u, std::abs(c->meta.inlet_speed));
      q = std::max(q, c->meta.fluid.rho * c->meta.inlet_speed * c->meta.inlet_speed);
    }
    if (!(u > 0.0)) throw ConfigurationError("cases without reference fields need a positive inlet speed");
    for (int k = 0; k < st.dim; ++k) st.velocity.push_back({0.0, u, false});
    st.pressure = {0.0, q, false};
    st.fields_estimated = true;
  }
  std::vector<double> Ds, Fs;
  for (const auto* c : cases) {
    Ds.push_back(c->meta.porous.D);
    Fs.push_back(c->meta.porous.F);
  }
  st.D = detail::range_of(Ds, eps);
  st.F = detail::range_of(Fs, eps);
  return st;
}

inline NormalizationStats compute_normalization(const std::vector<PointCloudCase>& cases, double eps = kStdFloor) {
  std::vector<const PointCloudCase*> ptrs;
  for (const auto& c : cases) ptrs.push_back(&c);
  return compute_normalization(ptrs, eps);
}

/// Training-split statistics; any requested id outside `split.train` is an
/// error.
inline NormalizationStats compute_normalization(const std::vector<PointCloudCase>& cases,
                                                const std::vector<std::string>& ids, const DatasetSplit& split,
                                                double eps = kStdFloor) {
  std::vector<const PointCloudCase*> ptrs;
  for (const auto& id : ids) {
    if (std::find(split.train.begin(), split.train.end(), id) == split.train.end()) {
      throw ConfigurationError("case '" + id + "' is not in the training split");
    }
    const PointCloudCase* found = nullptr;
    for (const auto& c : cases) {
      if (c.meta.case_id == id) found = &c;
    }
    if (!found) throw ConfigurationError("unknown case id '" + id + "'");
    ptrs.push_back(found);
  }
  return compute_normalization(ptrs, eps);
}

inline void check_stats(const NormalizationStats& st, const PointCloudCase& c) {
  if (!st.complete()) throw ConfigurationError("normalization statistics are incomplete");
  if (st.dim != c.dim) throw ConfigurationError("normalization statistics have the wrong dimension");
}

/// Z-scores coordinates, sdf and reference fields; maps D and F onto the
/// training range. chi and the one-hot columns are unchanged.
inline PointCloudCase normalize_case(const PointCloudCase& c, const NormalizationStats& st) {
  check_stats(st, c);
  PointCloudCase out = c;
  for (int k = 0; k < c.dim; ++k) {
    const auto& s = st.coords[static_cast<std::size_t>(k)];
    out.coords.col(k) = (c.coords.col(k).array() - s.mean) / s.std;
  }
  out.sdf = (c.sdf.array() - st.sdf.mean) / st.sdf.std;
  out.D = (c.D.array() - st.D.min) / st.D.span();
  out.F = (c.F.array() - st.F.min) / st.F.span();
  if (c.reference) {
    for (int k = 0; k < c.dim; ++k) {
      const auto& s = st.velocity[static_cast<std::size_t>(k)];
      out.reference->u.col(k) = (c.reference->u.col(k).array() - s.mean) / s.std;
    }
    out.reference->p = (c.reference->p.array() - st.pressure.mean) / st.pressure.std;
  }
  return out;
}

inline FlowField normalize_field(const FlowField& f, const NormalizationStats& st) {
  if (!st.complete() || f.u.cols() != st.dim) throw ConfigurationError("field and statistics dimensions differ");
  FlowField out = f;
  for (int k = 0; k < st.dim; ++k) {
    const auto& s = st.velocity[static_cast<std::size_t>(k)];
    out.u.col(k) = (f.u.col(k).array() - s.mean) / s.std;
  }
  out.p = (f.p.array() - st.pressure.mean) / st.pressure.std;
  return out;
}

inline FlowField denormalize_field(const FlowField& f, const NormalizationStats& st) {
  if (!st.complete() || f.u.cols() != st.dim) throw ConfigurationError("field and statistics dimensions differ");
  FlowField out = f;
  for (int k = 0; k < st.dim; ++k) {
    const auto& s = st.velocity[static_cast<std::size_t>(k)];
    out.u.col(k) = s.mean + s.std * f.u.col(k).array();
  }
  out.p = st.pressure.mean + st.pressure.std * f.p.array();
  return out;
}

/// Inverse of normalize_case for every normalized column.
inline PointCloudCase denormalize_case(const PointCloudCase& n, const NormalizationStats& st) {
  check_stats(st, n);
  PointCloudCase out = n;
  for (int k = 0; k < n.dim; ++k) {
    const auto& s = st.coords[static_cast<std::size_t>(k)];
    out.coords.col(k) = s.mean + s.std * n.coords.col(k).array();
  }
  out.sdf = st.sdf.mean + st.sdf.std * n.sdf.array();
  out.D = st.D.min + st.D.span() * n.D.array();
  out.F = st.F.min + st.F.span() * n.F.array();
  if (n.reference) out.reference = denormalize_field(*n.reference, st);
  return out;
}

inline nlohmann::json to_json(const NormalizationStats& st) {
  auto feat = [](const FeatureStat& f) { return nlohmann::json{{"mean", f.mean}, {"std", f.std}, {"constant", f.constant}}; };
  auto rng = [](const RangeStat& r) { return nlohmann::json{{"min", r.min}, {"max", r.max}, {"constant", r.constant}}; };
  nlohmann::json j;
  j["dim"] = st.dim;
  j["eps"] = st.eps;
  j["fields_estimated"] = st.fields_estimated;
  for (const auto& c : st.coords) j["coords"].push_back(feat(c));
  for (const auto& v : st.velocity) j["velocity"].push_back(feat(v));
  j["sdf"] = feat(st.sdf);
  j["pressure"] = feat(st.pressure);
  j["D"] = rng(st.D);
  j["F"] = rng(st.F);
  return j;
}

inline NormalizationStats stats_from_json(const nlohmann::json& j) {
  auto feat = [](const nlohmann::json& f) {
    return FeatureStat{f.at("mean").get<double>(), f.at("std").get<double>(), f.at("constant").get<bool>()};
  };
  auto rng = [](const nlohmann::json& r) {
    return RangeStat{r.at("min").get<double>(), r.at("max").get<double>(), r.at("constant").get<bool>()};
  };
  try {
    NormalizationStats st;
    st.dim = j.at("dim").get<int>();
    st.eps = j.at("eps").get<double>();
    st.fields_estimated = j.at("fields_estimated").get<bool>();
    for (const auto& c : j.at("coords")) st.coords.push_back(feat(c));
    for (const auto& v : j.at("velocity")) st.velocity.push_back(feat(v));
    st.sdf = feat(j.at("sdf"));
    st.pressure = feat(j.at("pressure"));
    st.D = rng(j.at("D"));
    st.F = rng(j.at("F"));
    if (!st.complete()) throw ConfigurationError("statistics are missing features");
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("malformed normalization statistics: ") + e.what());
  }
}

}  // namespace pipn::dataset
