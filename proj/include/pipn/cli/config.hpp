#pragma once

// Text key-value run configuration:
//
//   # comment
//   model = pipn
//   train.epochs = 300
//   pipn.decoder_widths = 512, 256, 128
//
// Every key must be known; values are parsed strictly. Command-line flags
// and environment variables are applied on top by the caller.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pipn/dataset/case_io.hpp"
#include "pipn/dataset/generators.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/config.hpp"
#include "pipn/training/train.hpp"

namespace pipn::cli {

struct KeyValue {
  std::string key, value;
  int line = 0;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// Lines of `key = value`; `#` starts a comment; blank lines are skipped.
/// Repeated keys are an error.
inline std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source = "config") {
  std::vector<KeyValue> out;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(std::string_view(raw).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = source + ":" + std::to_string(line);
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    KeyValue kv{trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)), line};
    if (kv.key.empty()) throw FormatError(where + ": empty key");
    if (kv.value.empty()) throw FormatError(where + ": empty value for '" + kv.key + "'");
    if (auto it = seen.find(kv.key); it != seen.end()) {
      throw FormatError(where + ": '" + kv.key + "' already set on line " + std::to_string(it->second));
    }
    seen[kv.key] = line;
    out.push_back(std::move(kv));
  }
  return out;
}

inline std::vector<KeyValue> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

namespace detail {

inline std::string where(const KeyValue& kv) { return "config line " + std::to_string(kv.line) + " ('" + kv.key + "')"; }

inline double to_double(const KeyValue& kv) { return dataset::parse_double(kv.value, where(kv)); }

template <class Int>
Int to_int(const std::string& s, const std::string& w) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError(w + ": expected an integer, got '" + s + "'");
  return v;
}

inline int to_int(const KeyValue& kv) { return to_int<int>(kv.value, where(kv)); }

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

inline std::vector<int> to_ints(const KeyValue& kv) {
  std::vector<int> out;
  for (const auto& s : split_list(kv.value)) out.push_back(to_int<int>(s, where(kv)));
  if (out.empty()) throw FormatError(where(kv) + ": empty list");
  return out;
}

inline std::vector<double> to_doubles(const KeyValue& kv) {
  std::vector<double> out;
  for (const auto& s : split_list(kv.value)) out.push_back(dataset::parse_double(s, where(kv)));
  if (out.empty()) throw FormatError(where(kv) + ": empty list");
  return out;
}

}  // namespace detail

/// Everything a configuration file can set.
struct RunConfig {
  models::ModelKind model = models::ModelKind::pipn;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  models::PipnConfig pipn;
  models::PiganoConfig pigano;
  training::TrainConfig train;
  int observations = 0;  // per training case, 0 keeps what the case carries
  int log_every = 10;
  dataset::MmsOptions mms;
  dataset::DuctOptions duct;

  RunConfig() { train.checkpoint_every = 100; }

  void apply(const KeyValue& kv) {
    using namespace detail;
    const std::string& k = kv.key;
    auto activation = [&] {
      try {
        return ad::activation_from_string(kv.value);
      } catch (const Error&) {
        throw ConfigurationError(where(kv) + ": unknown activation '" + kv.value + "'");
      }
    };
    auto sampler = [&](geometry::SamplerOptions& s, const std::string& f) {
      if (f == "near_weight") {
        s.near_weight = to_double(kv);
      } else if (f == "near_std_fraction") {
        s.near_std_fraction = to_double(kv);
      } else if (f == "interface_fraction") {
        s.interface_fraction = to_double(kv);
      } else if (f == "max_attempts") {
        s.max_attempts = to_int<long long>(kv.value, where(kv));
      } else {
        return false;
      }
      return true;
    };

    if (k == "model") {
      try {
        model = models::model_kind_from_string(kv.value);
      } catch (const Error&) {
        throw ConfigurationError(where(kv) + ": model must be pipn or pigano");
      }
    } else if (k == "seed") {
      seed = to_int<std::uint64_t>(kv.value, where(kv));
    } else if (k == "output_dir") {
      output_dir = kv.value;
    } else if (k == "train.epochs") {
      train.epochs = to_int(kv);
    } else if (k == "train.lr") {
      train.lr = to_double(kv);
    } else if (k == "train.alpha") {
      train.alpha = to_double(kv);
    } else if (k == "train.batch") {
      train.batch = to_int(kv);
    } else if (k == "train.dropout") {
      train.dropout = to_double(kv);
    } else if (k == "train.grad_clip") {
      train.grad_clip = to_double(kv);
    } else if (k == "train.checkpoint_every") {
      train.checkpoint_every = to_int(kv);
    } else if (k == "train.validate_every") {
      train.validate_every = to_int(kv);
    } else if (k == "train.observations") {
      observations = to_int(kv);
    } else if (k == "train.log_every") {
      log_every = to_int(kv);
    } else if (k == "weights.m") {
      train.weights.m = to_double(kv);
    } else if (k == "weights.c") {
      train.weights.c = to_double(kv);
    } else if (k == "weights.b") {
      train.weights.b = to_double(kv);
    } else if (k == "weights.d") {
      train.weights.d = to_double(kv);
    } else if (k == "pipn.local_widths") {
      pipn.local_widths = to_ints(kv);
    } else if (k == "pipn.global_widths") {
      pipn.global_widths = to_ints(kv);
    } else if (k == "pipn.decoder_widths") {
      pipn.decoder_widths = to_ints(kv);
    } else if (k == "pipn.activation") {
      pipn.activation = activation();
    } else if (k == "pigano.geometry_widths") {
      pigano.geometry_widths = to_ints(kv);
    } else if (k == "pigano.geometry_latent") {
      pigano.geometry_latent = to_int(kv);
    } else if (k == "pigano.branch_widths") {
      pigano.branch_widths = to_ints(kv);
    } else if (k == "pigano.branch_latent") {
      pigano.branch_latent = to_int(kv);
    } else if (k == "pigano.branch_points") {
      pigano.branch_points = to_int(kv);
    } else if (k == "pigano.trunk_widths") {
      pigano.trunk_widths = to_ints(kv);
    } else if (k == "pigano.output_widths") {
      pigano.output_widths = to_ints(kv);
    } else if (k == "pigano.activation") {
      pigano.activation = activation();
    } else if (k.rfind("sampler.", 0) == 0) {
      const std::string f = k.substr(8);
      if (!sampler(mms.sampler, f)) throw ConfigurationError("unknown config key '" + k + "'");
      sampler(duct.sampler, f);
    } else if (k == "mms.interior") {
      mms.interior = to_int(kv);
    } else if (k == "mms.boundary") {
      mms.boundary = to_int(kv);
    } else if (k == "mms.rho") {
      mms.rho = to_double(kv);
    } else if (k == "mms.mu") {
      mms.mu = to_double(kv);
    } else if (k == "mms.porosity") {
      mms.porosity = to_double(kv);
    } else if (k == "mms.particle_diameter") {
      mms.particle_diameter = to_double(kv);
    } else if (k == "mms.min_scale") {
      mms.min_scale = to_double(kv);
    } else if (k == "mms.max_scale") {
      mms.max_scale = to_double(kv);
    } else if (k == "duct.length") {
      duct.length = to_double(kv);
    } else if (k == "duct.height") {
      duct.height = to_double(kv);
    } else if (k == "duct.interior") {
      duct.interior = to_int(kv);
    } else if (k == "duct.boundary") {
      duct.boundary = to_int(kv);
    } else if (k == "duct.rho") {
      duct.rho = to_double(kv);
    } else if (k == "duct.mu") {
      duct.mu = to_double(kv);
    } else if (k == "duct.min_speed") {
      duct.min_speed = to_double(kv);
    } else if (k == "duct.max_speed") {
      duct.max_speed = to_double(kv);
    } else if (k == "duct.max_angle") {
      duct.max_angle = to_double(kv);
    } else if (k == "duct.darcy") {
      duct.darcy = to_doubles(kv);
    } else if (k == "duct.forchheimer") {
      duct.forchheimer = to_double(kv);
    } else {
      throw ConfigurationError("unknown config key '" + k + "' on line " + std::to_string(kv.line));
    }
  }

  void apply(const std::vector<KeyValue>& kvs) {
    for (const auto& kv : kvs) apply(kv);
  }

  /// PIPN_SEED and PIPN_OUTPUT_DIR, applied over the file values.
  void apply_environment() {
    if (const char* s = std::getenv("PIPN_SEED"); s && *s) {
      seed = detail::to_int<std::uint64_t>(s, "PIPN_SEED");
    }
    if (const char* s = std::getenv("PIPN_OUTPUT_DIR"); s && *s) output_dir = std::filesystem::path(s);
  }

  nlohmann::json to_json() const {
    return {{"model", models::to_string(model)},
            {"seed", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)},
            {"pipn", models::to_json(pipn)},
            {"pigano", models::to_json(pigano)},
            {"train", training::to_json(train)},
            {"checkpoint_every", train.checkpoint_every},
            {"validate_every", train.validate_every},
            {"observations", observations}};
  }
};

inline RunConfig load_run_config(const std::optional<std::filesystem::path>& path) {
  RunConfig c;
  if (path) c.apply(read_key_values(*path));
  c.apply_environment();
  return c;
}

}  // namespace pipn::cli
