#pragma once

// Checkpoint directory:
//   manifest.json   format version, model kind and config, seed, init
//                   scheme, epoch, normalization stats, optional extras
//   params.csv      name,row,col,value (one line per scalar)
//   optimizer.csv   name,row,col,m,v (only when optimizer state is saved)

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipn/ad/params.hpp"
#include "pipn/dataset/case_io.hpp"
#include "pipn/dataset/normalization.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/config.hpp"

namespace pipn::models {

inline constexpr int kCheckpointVersion = 1;

/// Adam moments, one matrix per parameter, plus the step counter.
struct OptimizerState {
  std::int64_t step = 0;
  ad::ParameterSet<double> m, v;

  bool operator==(const OptimizerState& o) const { return step == o.step && m == o.m && v == o.v; }
};

struct Checkpoint {
  ModelParameters model;
  int epoch = 0;
  std::optional<dataset::NormalizationStats> stats;
  std::optional<OptimizerState> optimizer;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

inline void write_table(const std::filesystem::path& path, const ad::ParameterSet<double>& a,
                        const ad::ParameterSet<double>* b) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << (b ? "name,row,col,m,v\n" : "name,row,col,value\n");
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& v = a.value(i);
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      for (Eigen::Index r = 0; r < v.rows(); ++r) {
        out << a.name(i) << ',' << r << ',' << c << ',' << dataset::format_double(v(r, c));
        if (b) out << ',' << dataset::format_double(b->value(i)(r, c));
        out << '\n';
      }
    }
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

/// Fills `targets` (already shaped) from a table; every entry must appear
/// exactly once.
inline void read_table(const std::filesystem::path& path, std::vector<ad::ParameterSet<double>*> targets) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty " + path.string());
  const std::size_t fields = 3 + targets.size();
  std::map<std::string, int> index;
  std::vector<std::vector<char>> seen;
  const auto& ref = *targets.front();
  for (std::size_t i = 0; i < ref.size(); ++i) {
    index[ref.name(i)] = static_cast<int>(i);
    seen.emplace_back(static_cast<std::size_t>(ref.value(i).size()), 0);
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = dataset::split_csv(line);
    const std::string where = path.filename().string() + " line " + std::to_string(lineno);
    if (f.size() != fields) throw FormatError(where + ": expected " + std::to_string(fields) + " fields");
    const auto it = index.find(std::string(f[0]));
    if (it == index.end()) throw FormatError(where + ": unknown parameter '" + std::string(f[0]) + "'");
    const auto r = static_cast<Eigen::Index>(dataset::parse_double(f[1], where));
    const auto c = static_cast<Eigen::Index>(dataset::parse_double(f[2], where));
    const auto& shape = ref.value(static_cast<std::size_t>(it->second));
    if (r < 0 || c < 0 || r >= shape.rows() || c >= shape.cols()) throw FormatError(where + ": index out of range");
    auto& mark = seen[static_cast<std::size_t>(it->second)][static_cast<std::size_t>(c * shape.rows() + r)];
    if (mark) throw FormatError(where + ": duplicate entry");
    mark = 1;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      targets[t]->value(static_cast<std::size_t>(it->second))(r, c) = dataset::parse_double(f[3 + t], where);
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    for (char s : seen[i]) {
      if (!s) throw FormatError(path.string() + " is missing entries of '" + ref.name(i) + "'");
    }
  }
}

inline ad::ParameterSet<double> zeros_like(const ad::ParameterSet<double>& p) {
  ad::ParameterSet<double> z;
  for (std::size_t i = 0; i < p.size(); ++i) z.add(p.name(i), Eigen::MatrixXd::Zero(p.value(i).rows(), p.value(i).cols()));
  return z;
}

}  // namespace detail

inline OptimizerState zero_optimizer_state(const ad::ParameterSet<double>& params) {
  return {0, detail::zeros_like(params), detail::zeros_like(params)};
}

/// Writes into a sibling temporary directory, then renames over `dir`.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = to_string(ck.model.kind);
  j["config"] = ck.model.kind == ModelKind::pipn ? to_json(ck.model.pipn) : to_json(ck.model.pigano);
  j["seed"] = ck.model.seed;
  j["init_scheme"] = ck.model.init_scheme;
  j["epoch"] = ck.epoch;
  j["parameter_count"] = ck.model.values.count();
  if (ck.stats) j["normalization"] = dataset::to_json(*ck.stats);
  if (ck.optimizer) j["optimizer_step"] = ck.optimizer->step;
  j["extra"] = ck.extra;
  {
    std::ofstream m(tmp / "manifest.json");
    if (!m) throw FormatError("cannot write " + (tmp / "manifest.json").string());
    m << j.dump(2) << '\n';
  }
  detail::write_table(tmp / "params.csv", ck.model.values, nullptr);
  if (ck.optimizer) detail::write_table(tmp / "optimizer.csv", ck.optimizer->m, &ck.optimizer->v);
  fs::remove_all(dir);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::rename(tmp, dir);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream m(path);
  if (!m) throw FormatError("missing " + path.string());
  Checkpoint ck;
  try {
    nlohmann::json j;
    m >> j;
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError("checkpoint format version " + std::to_string(version) + " in " + path.string() +
                        ", expected " + std::to_string(kCheckpointVersion));
    }
    const ModelKind kind = model_kind_from_string(j.at("kind").get<std::string>());
    const auto seed = j.at("seed").get<std::uint64_t>();
    ck.model = kind == ModelKind::pipn ? init_parameters(pipn_config_from_json(j.at("config")), seed)
                                       : init_parameters(pigano_config_from_json(j.at("config")), seed);
    ck.model.init_scheme = j.value("init_scheme", std::string(kInitScheme));
    ck.epoch = j.at("epoch").get<int>();
    if (j.contains("normalization")) ck.stats = dataset::stats_from_json(j["normalization"]);
    if (j.contains("optimizer_step")) {
      ck.optimizer = zero_optimizer_state(ck.model.values);
      ck.optimizer->step = j["optimizer_step"].get<std::int64_t>();
    }
    ck.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest " + path.string() + ": " + e.what());
  }
  detail::read_table(dir / "params.csv", {&ck.model.values});
  if (ck.optimizer) detail::read_table(dir / "optimizer.csv", {&ck.optimizer->m, &ck.optimizer->v});
  return ck;
}

}  // namespace pipn::models
