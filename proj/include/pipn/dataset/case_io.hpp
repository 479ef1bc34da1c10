#pragma once

// Case directory format:
//   <dir>/manifest.json  metadata (schema_version, dim, case_meta, counts)
//   <dir>/points.csv     one header row, one row per point:
//     x,y[,z],chi,sdf,bc_inlet,bc_outlet,bc_wall,bc_interface,D,F[,u_x,u_y[,u_z],p]
// Floats are written with 17 significant digits.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"

namespace pipn::dataset {

inline constexpr int kSchemaVersion = 1;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("cannot parse number '" + std::string(s) + "' (" + where + ")");
  }
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<std::string> point_columns(int dim, bool with_reference) {
  static const char* axes[] = {"x", "y", "z"};
  std::vector<std::string> cols;
  for (int k = 0; k < dim; ++k) cols.emplace_back(axes[k]);
  for (const char* c : {"chi", "sdf", "bc_inlet", "bc_outlet", "bc_wall", "bc_interface", "D", "F"}) cols.emplace_back(c);
  if (with_reference) {
    static const char* vel[] = {"u_x", "u_y", "u_z"};
    for (int k = 0; k < dim; ++k) cols.emplace_back(vel[k]);
    cols.emplace_back("p");
  }
  return cols;
}

inline nlohmann::json meta_to_json(const PointCloudCase& c) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["dim"] = c.dim;
  j["case_id"] = c.meta.case_id;
  j["provenance"] = c.meta.provenance;
  j["inlet"] = {{"speed", c.meta.inlet_speed}, {"angle", c.meta.inlet_angle}};
  j["fluid"] = {{"rho", c.meta.fluid.rho}, {"mu", c.meta.fluid.mu}};
  j["porous"] = {{"D", c.meta.porous.D}, {"F", c.meta.porous.F}};
  j["forcing"] = c.meta.forcing;
  j["n_points"] = c.size();
  j["has_reference"] = c.reference.has_value();
  j["observations"] = {{"seed", c.observation_seed}, {"indices", c.observations}};
  if (c.meta.solid_surface_tag) j["solid_surface_tag"] = *c.meta.solid_surface_tag;
  j["wall_normal_axis"] = c.meta.wall_normal_axis;
  return j;
}

inline void save_case(const PointCloudCase& c, const std::filesystem::path& dir) {
  c.validate();
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.json");
    if (!m) throw FormatError("cannot write " + (dir / "manifest.json").string());
    m << meta_to_json(c).dump(2) << '\n';
  }
  std::ofstream out(dir / "points.csv");
  if (!out) throw FormatError("cannot write " + (dir / "points.csv").string());
  const auto cols = point_columns(c.dim, c.reference.has_value());
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  std::string line;
  for (int i = 0; i < c.size(); ++i) {
    line.clear();
    auto put = [&line](double v) {
      if (!line.empty()) line += ',';
      line += format_double(v);
    };
    for (int k = 0; k < c.dim; ++k) put(c.coords(i, k));
    put(c.chi(i));
    put(c.sdf(i));
    for (int t = 0; t < kBoundaryTypes; ++t) put(c.onehot(i, t));
    put(c.D(i));
    put(c.F(i));
    if (c.reference) {
      for (int k = 0; k < c.dim; ++k) put(c.reference->u(i, k));
      put(c.reference->p(i));
    }
    out << line << '\n';
  }
  if (!out) throw FormatError("write failed for " + (dir / "points.csv").string());
}

inline PointCloudCase load_case(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream m(manifest_path);
  if (!m) throw FormatError("missing " + manifest_path.string());
  nlohmann::json j;
  try {
    m >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed " + manifest_path.string() + ": " + e.what());
  }
  PointCloudCase c;
  int n = 0;
  bool has_ref = false;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      throw FormatError("schema version " + std::to_string(version) + " in " + manifest_path.string() +
                        ", expected " + std::to_string(kSchemaVersion));
    }
    c.dim = j.at("dim").get<int>();
    c.meta.case_id = j.at("case_id").get<std::string>();
    c.meta.provenance = j.value("provenance", std::string());
    c.meta.inlet_speed = j.at("inlet").at("speed").get<double>();
    c.meta.inlet_angle = j.at("inlet").at("angle").get<double>();
    c.meta.fluid.rho = j.at("fluid").at("rho").get<double>();
    c.meta.fluid.mu = j.at("fluid").at("mu").get<double>();
    c.meta.porous.D = j.at("porous").at("D").get<double>();
    c.meta.porous.F = j.at("porous").at("F").get<double>();
    c.meta.forcing = j.value("forcing", std::string("none"));
    n = j.at("n_points").get<int>();
    has_ref = j.value("has_reference", false);
    if (j.contains("observations")) {
      c.observation_seed = j["observations"].value("seed", std::uint64_t{0});
      c.observations = j["observations"].value("indices", std::vector<int>{});
    }
    if (j.contains("solid_surface_tag")) c.meta.solid_surface_tag = j["solid_surface_tag"].get<std::string>();
    c.meta.wall_normal_axis = j.value("wall_normal_axis", 1);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (c.dim != 2 && c.dim != 3) throw FormatError("dim must be 2 or 3 in " + manifest_path.string());
  if (n < 0) throw FormatError("negative n_points in " + manifest_path.string());

  const auto points_path = dir / "points.csv";
  std::ifstream in(points_path);
  if (!in) throw FormatError("missing " + points_path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty " + points_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto expected = point_columns(c.dim, has_ref);
  {
    const auto header = split_csv(line);
    bool ok = header.size() == expected.size();
    for (std::size_t i = 0; ok && i < header.size(); ++i) ok = header[i] == expected[i];
    if (!ok) throw FormatError("unexpected header in " + points_path.string() + ": '" + line + "'");
  }
  const int d = c.dim;
  c.coords.resize(n, d);
  c.chi.resize(n);
  c.sdf.resize(n);
  c.onehot.resize(n, kBoundaryTypes);
  c.D.resize(n);
  c.F.resize(n);
  if (has_ref) c.reference = FlowField{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row >= n) throw FormatError(points_path.string() + " has more rows than n_points = " + std::to_string(n));
    const auto f = split_csv(line);
    const std::string where = points_path.filename().string() + " line " + std::to_string(row + 2);
    if (f.size() != expected.size()) {
      throw FormatError(where + ": expected " + std::to_string(expected.size()) + " fields, found " +
                        std::to_string(f.size()));
    }
    std::size_t k = 0;
    for (int a = 0; a < d; ++a) c.coords(row, a) = parse_double(f[k++], where);
    c.chi(row) = parse_double(f[k++], where);
    c.sdf(row) = parse_double(f[k++], where);
    for (int t = 0; t < kBoundaryTypes; ++t) c.onehot(row, t) = parse_double(f[k++], where);
    c.D(row) = parse_double(f[k++], where);
    c.F(row) = parse_double(f[k++], where);
    if (has_ref) {
      for (int a = 0; a < d; ++a) c.reference->u(row, a) = parse_double(f[k++], where);
      c.reference->p(row) = parse_double(f[k++], where);
    }
    ++row;
  }
  if (row != n) {
    throw FormatError(points_path.string() + " is truncated: " + std::to_string(row) + " of " + std::to_string(n) +
                      " rows");
  }
  c.validate();
  return c;
}

/// Case directories (those holding a manifest.json) directly under `root`,
/// sorted by name.
inline std::vector<std::filesystem::path> list_case_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw FormatError("not a directory: " + root.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<PointCloudCase> load_dataset(const std::filesystem::path& root) {
  std::vector<PointCloudCase> cases;
  for (const auto& d : list_case_dirs(root)) cases.push_back(load_case(d));
  if (cases.empty()) throw FormatError("no case directories under " + root.string());
  return cases;
}

}  // namespace pipn::dataset
