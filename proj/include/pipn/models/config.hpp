#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipn/ad/jet.hpp"
#include "pipn/ad/params.hpp"
#include "pipn/ad/tape.hpp"
#include "pipn/dataset/point_cloud.hpp"
#include "pipn/errors.hpp"

namespace pipn::models {

using ad::Activation;

/// Per-point features after the coordinates: sdf and the boundary one-hot.
inline constexpr int kPointFeatures = 1 + kBoundaryTypes;

enum class ModelKind { pipn, pigano };

inline const char* to_string(ModelKind k) { return k == ModelKind::pipn ? "pipn" : "pigano"; }

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "pipn") return ModelKind::pipn;
  if (s == "pigano") return ModelKind::pigano;
  throw ConfigurationError("unknown model kind '" + s + "' (expected pipn or pigano)");
}

namespace detail {

inline void check_widths(const std::vector<int>& w, const char* what, bool allow_empty = false) {
  if (w.empty() && !allow_empty) throw ConfigurationError(std::string(what) + ": at least one layer is required");
  for (int v : w) {
    if (v <= 0) throw ConfigurationError(std::string(what) + ": layer widths must be positive");
  }
}

inline Eigen::Index mlp_count(int in, const std::vector<int>& widths) {
  Eigen::Index n = 0;
  for (int w : widths) {
    n += static_cast<Eigen::Index>(in) * w + w;
    in = w;
  }
  return n;
}

}  // namespace detail

/// Shared local encoder on coordinates, global encoder on (local features,
/// sdf, one-hot) pooled over points, decoder on (local, global).
struct PipnConfig {
  int dim = 2;
  std::vector<int> local_widths{64, 64};
  std::vector<int> global_widths{64, 128, 1024};  // last entry is the global feature size
  std::vector<int> decoder_widths{512, 256, 128};  // hidden layers; a dim + 1 output layer follows
  Activation activation = Activation::silu;
  double dropout = 0.0;

  int output_dim() const { return dim + 1; }
  int local_dim() const { return local_widths.back(); }
  int global_feature() const { return global_widths.back(); }

  ad::MlpShape local_shape() const { return {"local", dim, local_widths, activation, true}; }
  ad::MlpShape global_shape() const { return {"global", local_dim() + kPointFeatures, global_widths, activation, true}; }
  ad::MlpShape decoder_shape() const {
    auto w = decoder_widths;
    w.push_back(output_dim());
    return {"decoder", local_dim() + global_feature(), w, activation, false};
  }

  void validate() const {
    if (dim != 2 && dim != 3) throw ConfigurationError("pipn: dim must be 2 or 3");
    detail::check_widths(local_widths, "pipn local encoder");
    detail::check_widths(global_widths, "pipn global encoder");
    detail::check_widths(decoder_widths, "pipn decoder");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigurationError("pipn: dropout must lie in [0, 1)");
  }

  Eigen::Index parameter_count() const {
    return local_shape().parameter_count() + global_shape().parameter_count() + decoder_shape().parameter_count();
  }

  bool operator==(const PipnConfig&) const = default;
};

/// Geometry encoder (pooled), branch over M boundary records (pooled), trunk
/// on (query coordinates, geometry latent) multiplied by the branch latent,
/// then a shared output stack.
struct PiganoConfig {
  int dim = 2;
  std::vector<int> geometry_widths{64, 128};
  int geometry_latent = 128;
  std::vector<int> branch_widths{64, 128};
  int branch_latent = 128;
  int branch_points = 64;  // M
  std::vector<int> trunk_widths{128, 128};  // last entry must equal branch_latent
  std::vector<int> output_widths{128, 64};  // hidden layers; a dim + 1 output layer follows
  Activation activation = Activation::silu;
  double dropout = 0.0;

  int output_dim() const { return dim + 1; }
  /// Branch record: position, boundary velocity, D, F, two availability flags.
  int branch_record_dim() const { return 2 * dim + 4; }

  ad::MlpShape geometry_shape() const {
    auto w = geometry_widths;
    w.push_back(geometry_latent);
    return {"geometry", dim + kPointFeatures, w, activation, true};
  }
  ad::MlpShape branch_shape() const {
    auto w = branch_widths;
    w.push_back(branch_latent);
    return {"branch", branch_record_dim(), w, activation, true};
  }
  ad::MlpShape trunk_shape() const { return {"trunk", dim + geometry_latent, trunk_widths, activation, true}; }
  ad::MlpShape output_shape() const {
    auto w = output_widths;
    w.push_back(output_dim());
    return {"output", trunk_widths.back(), w, activation, false};
  }

  void validate() const {
    if (dim != 2 && dim != 3) throw ConfigurationError("pigano: dim must be 2 or 3");
    detail::check_widths(geometry_widths, "pigano geometry encoder", true);
    detail::check_widths(branch_widths, "pigano branch", true);
    detail::check_widths(trunk_widths, "pigano trunk");
    detail::check_widths(output_widths, "pigano output stack", true);
    if (geometry_latent <= 0 || branch_latent <= 0) throw ConfigurationError("pigano: latent sizes must be positive");
    if (branch_points <= 0) throw ConfigurationError("pigano: branch point count must be positive");
    if (trunk_widths.back() != branch_latent) {
      throw ConfigurationError("pigano: last trunk width must equal the branch latent size");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigurationError("pigano: dropout must lie in [0, 1)");
  }

  Eigen::Index parameter_count() const {
    return geometry_shape().parameter_count() + branch_shape().parameter_count() + trunk_shape().parameter_count() +
           output_shape().parameter_count();
  }

  bool operator==(const PiganoConfig&) const = default;
};

inline constexpr const char* kInitScheme = "lecun_uniform";

/// Weights and the architecture they belong to.
struct ModelParameters {
  ModelKind kind = ModelKind::pipn;
  PipnConfig pipn;
  PiganoConfig pigano;
  std::uint64_t seed = 0;
  std::string init_scheme = kInitScheme;
  ad::ParameterSet<double> values;

  int dim() const { return kind == ModelKind::pipn ? pipn.dim : pigano.dim; }
  double dropout() const { return kind == ModelKind::pipn ? pipn.dropout : pigano.dropout; }
};

inline std::vector<ad::MlpShape> shapes_of(const ModelParameters& m) {
  if (m.kind == ModelKind::pipn) return {m.pipn.local_shape(), m.pipn.global_shape(), m.pipn.decoder_shape()};
  return {m.pigano.geometry_shape(), m.pigano.branch_shape(), m.pigano.trunk_shape(), m.pigano.output_shape()};
}

/// Weights ~ U(-sqrt(3 / fan_in), sqrt(3 / fan_in)) (variance 1 / fan_in),
/// drawn layer by layer in column-major order; biases zero.
inline void init_mlp(ad::ParameterSet<double>& set, const ad::MlpShape& shape, std::mt19937_64& rng) {
  int in = shape.input_dim;
  for (std::size_t i = 0; i < shape.widths.size(); ++i) {
    const int out = shape.widths[i];
    const double bound = std::sqrt(3.0 / in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(in, out);
    for (Eigen::Index j = 0; j < w.size(); ++j) w.data()[j] = u(rng);
    set.add(shape.weight_name(i), std::move(w));
    set.add(shape.bias_name(i), Eigen::MatrixXd::Zero(1, out));
    in = out;
  }
}

inline ModelParameters init_parameters(const PipnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParameters m;
  m.kind = ModelKind::pipn;
  m.pipn = cfg;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& s : shapes_of(m)) init_mlp(m.values, s, rng);
  return m;
}

inline ModelParameters init_parameters(const PiganoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParameters m;
  m.kind = ModelKind::pigano;
  m.pigano = cfg;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& s : shapes_of(m)) init_mlp(m.values, s, rng);
  return m;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline nlohmann::json to_json(const PipnConfig& c) {
  return {{"dim", c.dim},
          {"local_widths", c.local_widths},
          {"global_widths", c.global_widths},
          {"decoder_widths", c.decoder_widths},
          {"activation", ad::to_string(c.activation)},
          {"dropout", c.dropout}};
}

inline nlohmann::json to_json(const PiganoConfig& c) {
  return {{"dim", c.dim},
          {"geometry_widths", c.geometry_widths},
          {"geometry_latent", c.geometry_latent},
          {"branch_widths", c.branch_widths},
          {"branch_latent", c.branch_latent},
          {"branch_points", c.branch_points},
          {"trunk_widths", c.trunk_widths},
          {"output_widths", c.output_widths},
          {"activation", ad::to_string(c.activation)},
          {"dropout", c.dropout}};
}

inline PipnConfig pipn_config_from_json(const nlohmann::json& j) {
  PipnConfig c;
  c.dim = j.at("dim").get<int>();
  c.local_widths = j.at("local_widths").get<std::vector<int>>();
  c.global_widths = j.at("global_widths").get<std::vector<int>>();
  c.decoder_widths = j.at("decoder_widths").get<std::vector<int>>();
  c.activation = ad::activation_from_string(j.at("activation").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

inline PiganoConfig pigano_config_from_json(const nlohmann::json& j) {
  PiganoConfig c;
  c.dim = j.at("dim").get<int>();
  c.geometry_widths = j.at("geometry_widths").get<std::vector<int>>();
  c.geometry_latent = j.at("geometry_latent").get<int>();
  c.branch_widths = j.at("branch_widths").get<std::vector<int>>();
  c.branch_latent = j.at("branch_latent").get<int>();
  c.branch_points = j.at("branch_points").get<int>();
  c.trunk_widths = j.at("trunk_widths").get<std::vector<int>>();
  c.output_widths = j.at("output_widths").get<std::vector<int>>();
  c.activation = ad::activation_from_string(j.at("activation").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

/// Inverted dropout masks (kept entries scaled by 1 / (1 - p)), one per
/// requested layer width, for `rows` points.
inline std::vector<Eigen::MatrixXd> dropout_masks(const std::vector<int>& widths, int rows, double p,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  std::vector<Eigen::MatrixXd> masks;
  for (int w : widths) {
    Eigen::MatrixXd m(rows, w);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = keep(rng) ? scale : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

/// Training mode applies dropout with masks seeded by `dropout_seed`.
struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

}  // namespace pipn::models
