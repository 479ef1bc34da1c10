#pragma once

// Region-wise mean absolute errors in physical units, and per-coefficient
// grouping of per-case tables.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pipn/dataset/case_io.hpp"
#include "pipn/dataset/normalization.hpp"
#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/checkpoint.hpp"
#include "pipn/models/inputs.hpp"
#include "pipn/models/pigano.hpp"
#include "pipn/models/pipn.hpp"

namespace pipn::eval {

inline std::vector<std::string> field_names(int dim) {
  std::vector<std::string> f{"u_x", "u_y"};
  if (dim == 3) f.push_back("u_z");
  f.push_back("p");
  return f;
}

/// Point masks per region. Porous and fluid partition the points; the solid
/// surface region exists only when the case names a tag for it.
struct RegionMasks {
  std::vector<std::string> names;
  std::vector<std::vector<char>> masks;
};

inline RegionMasks region_masks(const PointCloudCase& c) {
  RegionMasks r;
  r.names = {"porous", "fluid"};
  std::vector<char> porous(static_cast<std::size_t>(c.size())), fluid(porous.size());
  for (int i = 0; i < c.size(); ++i) {
    porous[static_cast<std::size_t>(i)] = c.chi(i) > 0.5;
    fluid[static_cast<std::size_t>(i)] = !porous[static_cast<std::size_t>(i)];
  }
  r.masks = {porous, fluid};
  if (c.meta.solid_surface_tag) {
    const BoundaryTag tag = boundary_tag_from_string(*c.meta.solid_surface_tag);
    std::vector<char> solid(porous.size());
    for (int i = 0; i < c.size(); ++i) solid[static_cast<std::size_t>(i)] = c.has_tag(i, tag);
    r.names.push_back("solid_surface");
    r.masks.push_back(std::move(solid));
  }
  return r;
}

/// Rows: fields; columns: "global" then the regions. Absent entries (empty
/// regions) are NaN with present = false.
struct RegionMaeTable {
  std::vector<std::string> fields;
  std::vector<std::string> regions;
  Eigen::MatrixXd mae;                 // fields x regions
  std::vector<char> present;           // per region
  std::vector<long long> counts;       // points per region

  double at(const std::string& field, const std::string& region) const {
    for (std::size_t f = 0; f < fields.size(); ++f) {
      for (std::size_t r = 0; r < regions.size(); ++r) {
        if (fields[f] == field && regions[r] == region) {
          if (!present[r]) throw ConfigurationError("region '" + region + "' is absent");
          return mae(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(r));
        }
      }
    }
    throw ConfigurationError("no entry " + field + "/" + region);
  }

  bool is_present(const std::string& region) const {
    for (std::size_t r = 0; r < regions.size(); ++r) {
      if (regions[r] == region) return present[r];
    }
    return false;
  }
};

inline RegionMaeTable mae_by_region(const FlowField& predicted, const FlowField& reference, const RegionMasks& masks) {
  const auto n = reference.u.rows();
  const auto d = reference.u.cols();
  if (predicted.u.rows() != n || predicted.u.cols() != d || predicted.p.size() != n || reference.p.size() != n) {
    throw ConfigurationError("predicted and reference fields differ in shape");
  }
  for (const auto& m : masks.masks) {
    if (static_cast<Eigen::Index>(m.size()) != n) throw ConfigurationError("region mask size differs from field size");
  }
  RegionMaeTable t;
  t.fields = field_names(static_cast<int>(d));
  t.regions = {"global"};
  t.regions.insert(t.regions.end(), masks.names.begin(), masks.names.end());
  const auto nf = static_cast<Eigen::Index>(t.fields.size());
  const auto nr = static_cast<Eigen::Index>(t.regions.size());
  Eigen::MatrixXd err(n, nf);
  err.leftCols(d) = (predicted.u - reference.u).cwiseAbs();
  err.col(d) = (predicted.p - reference.p).cwiseAbs();
  if (!err.allFinite()) throw NumericalError("non-finite prediction error", "mae_by_region");
  t.mae = Eigen::MatrixXd::Constant(nf, nr, std::numeric_limits<double>::quiet_NaN());
  t.present.assign(static_cast<std::size_t>(nr), 0);
  t.counts.assign(static_cast<std::size_t>(nr), 0);
  for (Eigen::Index r = 0; r < nr; ++r) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(nf);
    long long count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (r > 0 && !masks.masks[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(i)]) continue;
      sum += err.row(i);
      ++count;
    }
    t.counts[static_cast<std::size_t>(r)] = count;
    if (count > 0) {
      t.mae.col(r) = sum.transpose() / static_cast<double>(count);
      t.present[static_cast<std::size_t>(r)] = 1;
    }
  }
  return t;
}

inline std::string format_entry(double v, bool present) {
  if (!present) return "absent";
  std::ostringstream s;
  s << std::scientific << std::setprecision(3) << v;
  return s.str();
}

/// Aligned text table.
inline std::string to_text(const RegionMaeTable& t) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"field"};
  header.insert(header.end(), t.regions.begin(), t.regions.end());
  cells.push_back(header);
  for (std::size_t f = 0; f < t.fields.size(); ++f) {
    std::vector<std::string> row{t.fields[f]};
    for (std::size_t r = 0; r < t.regions.size(); ++r) {
      row.push_back(format_entry(t.mae(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(r)), t.present[r]));
    }
    cells.push_back(row);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << row[c];
      }
    }
    out << '\n';
  }
  return out.str();
}

/// field,<region>... with full precision; absent entries are empty.
inline std::string to_csv(const RegionMaeTable& t) {
  std::ostringstream out;
  out << "field";
  for (const auto& r : t.regions) out << ',' << r;
  out << '\n';
  for (std::size_t f = 0; f < t.fields.size(); ++f) {
    out << t.fields[f];
    for (std::size_t r = 0; r < t.regions.size(); ++r) {
      out << ',';
      if (t.present[r]) out << dataset::format_double(t.mae(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(r)));
    }
    out << '\n';
  }
  return out.str();
}

inline RegionMaeTable table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty MAE table");
  auto header = dataset::split_csv(line);
  if (header.empty() || header[0] != "field") throw FormatError("MAE table must start with a 'field' column");
  RegionMaeTable t;
  for (std::size_t c = 1; c < header.size(); ++c) t.regions.emplace_back(header[c]);
  std::vector<std::vector<std::optional<double>>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = dataset::split_csv(line);
    const std::string where = "MAE table line " + std::to_string(lineno);
    if (f.size() != header.size()) throw FormatError(where + ": wrong field count");
    t.fields.emplace_back(f[0]);
    std::vector<std::optional<double>> row;
    for (std::size_t c = 1; c < f.size(); ++c) {
      if (f[c].empty()) {
        row.push_back(std::nullopt);
      } else {
        row.push_back(dataset::parse_double(f[c], where));
      }
    }
    rows.push_back(std::move(row));
  }
  const auto nf = static_cast<Eigen::Index>(t.fields.size());
  const auto nr = static_cast<Eigen::Index>(t.regions.size());
  t.mae = Eigen::MatrixXd::Constant(nf, nr, std::numeric_limits<double>::quiet_NaN());
  t.present.assign(static_cast<std::size_t>(nr), 1);
  t.counts.assign(static_cast<std::size_t>(nr), 0);
  for (Eigen::Index f = 0; f < nf; ++f) {
    for (Eigen::Index r = 0; r < nr; ++r) {
      const auto& v = rows[static_cast<std::size_t>(f)][static_cast<std::size_t>(r)];
      if (v) {
        t.mae(f, r) = *v;
      } else {
        t.present[static_cast<std::size_t>(r)] = 0;
      }
    }
  }
  return t;
}

/// Arithmetic mean of per-case tables within each distinct D. A region is
/// absent in a group when it is absent in every member; otherwise the mean
/// runs over the members where it is present.
struct GroupedErrors {
  std::vector<double> d_values;  // ascending
  std::vector<RegionMaeTable> tables;
  std::vector<int> case_counts;
};

inline GroupedErrors group_errors_by_coefficient(const std::vector<RegionMaeTable>& tables,
                                                 const std::vector<double>& d_values) {
  if (tables.size() != d_values.size()) throw ConfigurationError("one D value is needed per table");
  std::map<double, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    if (tables[i].fields != tables.front().fields || tables[i].regions != tables.front().regions) {
      throw ConfigurationError("tables to group must share fields and regions");
    }
    groups[d_values[i]].push_back(i);
  }
  GroupedErrors g;
  for (const auto& [d, members] : groups) {
    RegionMaeTable t;
    t.fields = tables[members.front()].fields;
    t.regions = tables[members.front()].regions;
    const auto nf = static_cast<Eigen::Index>(t.fields.size());
    const auto nr = static_cast<Eigen::Index>(t.regions.size());
    t.mae = Eigen::MatrixXd::Constant(nf, nr, std::numeric_limits<double>::quiet_NaN());
    t.present.assign(static_cast<std::size_t>(nr), 0);
    t.counts.assign(static_cast<std::size_t>(nr), 0);
    for (Eigen::Index r = 0; r < nr; ++r) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(nf);
      int k = 0;
      for (std::size_t i : members) {
        if (!tables[i].present[static_cast<std::size_t>(r)]) continue;
        sum += tables[i].mae.col(r);
        t.counts[static_cast<std::size_t>(r)] += tables[i].counts[static_cast<std::size_t>(r)];
        ++k;
      }
      if (k > 0) {
        t.mae.col(r) = sum / k;
        t.present[static_cast<std::size_t>(r)] = 1;
      }
    }
    g.d_values.push_back(d);
    g.tables.push_back(std::move(t));
    g.case_counts.push_back(static_cast<int>(members.size()));
  }
  return g;
}

/// One row per field, one column per D value, for the chosen region.
inline std::string grouped_to_csv(const GroupedErrors& g, const std::string& region = "global") {
  std::ostringstream out;
  out << "field";
  for (double d : g.d_values) out << ",D=" << dataset::format_double(d);
  out << '\n';
  if (g.tables.empty()) return out.str();
  for (const auto& field : g.tables.front().fields) {
    out << field;
    for (const auto& t : g.tables) {
      out << ',';
      if (t.is_present(region)) out << dataset::format_double(t.at(field, region));
    }
    out << '\n';
  }
  return out.str();
}

inline std::string grouped_to_text(const GroupedErrors& g, const std::string& region = "global") {
  RegionMaeTable t;
  if (g.tables.empty()) return {};
  t.fields = g.tables.front().fields;
  const auto nf = static_cast<Eigen::Index>(t.fields.size());
  t.mae.resize(nf, static_cast<Eigen::Index>(g.d_values.size()));
  for (std::size_t k = 0; k < g.d_values.size(); ++k) {
    std::ostringstream name;
    name << "D=" << g.d_values[k];
    t.regions.push_back(name.str());
    const bool present = g.tables[k].is_present(region);
    t.present.push_back(present);
    for (Eigen::Index f = 0; f < nf; ++f) {
      t.mae(f, static_cast<Eigen::Index>(k)) =
          present ? g.tables[k].at(t.fields[static_cast<std::size_t>(f)], region) : std::nan("");
    }
  }
  return to_text(t);
}

/// Physical-unit prediction at every point of a case, in case order. The
/// operator model draws its branch records with `branch_seed`.
inline FlowField predict_case(const models::ModelParameters& model, const PointCloudCase& c,
                              const dataset::NormalizationStats& st, std::uint64_t branch_seed = 0) {
  const auto nc = dataset::normalize_case(c, st);
  const auto cloud = models::make_cloud(nc, false);
  Eigen::MatrixXd y;
  if (model.kind == models::ModelKind::pipn) {
    y = models::pipn_predict(model, cloud.input);
  } else {
    const auto branch =
        models::normalize_branch(models::select_branch_points(c, model.pigano.branch_points, branch_seed), st);
    y = models::pigano_predict(model, cloud.input, branch);
  }
  y = models::to_case_order(y, cloud.order);
  FlowField n;
  n.u = y.leftCols(c.dim);
  n.p = y.col(c.dim);
  return dataset::denormalize_field(n, st);
}

/// Per-case evaluation against the reference fields.
inline RegionMaeTable evaluate_case(const FlowField& predicted, const PointCloudCase& c) {
  if (!c.reference) throw ConfigurationError("case '" + c.meta.case_id + "' has no reference fields");
  return mae_by_region(predicted, *c.reference, region_masks(c));
}

/// Point-weighted mean of per-case tables (each region weighted by its point
/// count), i.e. the MAE over all points of all cases.
inline RegionMaeTable pool_tables(const std::vector<RegionMaeTable>& tables) {
  if (tables.empty()) throw ConfigurationError("no tables to pool");
  RegionMaeTable t;
  t.fields = tables.front().fields;
  t.regions = tables.front().regions;
  const auto nf = static_cast<Eigen::Index>(t.fields.size());
  const auto nr = static_cast<Eigen::Index>(t.regions.size());
  t.mae = Eigen::MatrixXd::Constant(nf, nr, std::numeric_limits<double>::quiet_NaN());
  t.present.assign(static_cast<std::size_t>(nr), 0);
  t.counts.assign(static_cast<std::size_t>(nr), 0);
  for (Eigen::Index r = 0; r < nr; ++r) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(nf);
    long long count = 0;
    for (const auto& x : tables) {
      if (x.fields != t.fields || x.regions != t.regions) throw ConfigurationError("tables differ in layout");
      if (!x.present[static_cast<std::size_t>(r)]) continue;
      const long long k = x.counts[static_cast<std::size_t>(r)];
      sum += x.mae.col(r) * static_cast<double>(k);
      count += k;
    }
    t.counts[static_cast<std::size_t>(r)] = count;
    if (count > 0) {
      t.mae.col(r) = sum / static_cast<double>(count);
      t.present[static_cast<std::size_t>(r)] = 1;
    }
  }
  return t;
}

}  // namespace pipn::eval
