#pragma once

// Wall-clock timing of value-only forward passes.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipn/dataset/normalization.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/inputs.hpp"
#include "pipn/models/pigano.hpp"
#include "pipn/models/pipn.hpp"

namespace pipn::eval {

struct CaseTiming {
  std::string case_id;
  int points = 0;
  std::vector<double> samples;  // seconds, one per repetition
  double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;
};

struct TimingReport {
  std::vector<CaseTiming> cases;
  int repetitions = 0;
  double mean = 0.0;  // over cases of the per-case means
  double std = 0.0;
  std::optional<double> solver_reference;  // user-supplied annotation, seconds

  bool operator==(const TimingReport& o) const { return to_json() == o.to_json(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["schema"] = "timing-v1";
    j["repetitions"] = repetitions;
    j["mean_s"] = mean;
    j["std_s"] = std;
    j["solver_reference_s"] = solver_reference ? nlohmann::json(*solver_reference) : nlohmann::json(nullptr);
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : cases) {
      a.push_back({{"case_id", c.case_id},
                   {"points", c.points},
                   {"samples_s", c.samples},
                   {"mean_s", c.mean},
                   {"std_s", c.std},
                   {"min_s", c.min},
                   {"max_s", c.max}});
    }
    j["cases"] = std::move(a);
    return j;
  }

  static TimingReport from_json(const nlohmann::json& j) {
    try {
      if (j.at("schema").get<std::string>() != "timing-v1") throw FormatError("unknown timing report schema");
      TimingReport r;
      r.repetitions = j.at("repetitions").get<int>();
      r.mean = j.at("mean_s").get<double>();
      r.std = j.at("std_s").get<double>();
      if (!j.at("solver_reference_s").is_null()) r.solver_reference = j["solver_reference_s"].get<double>();
      for (const auto& c : j.at("cases")) {
        CaseTiming t;
        t.case_id = c.at("case_id").get<std::string>();
        t.points = c.at("points").get<int>();
        t.samples = c.at("samples_s").get<std::vector<double>>();
        t.mean = c.at("mean_s").get<double>();
        t.std = c.at("std_s").get<double>();
        t.min = c.at("min_s").get<double>();
        t.max = c.at("max_s").get<double>();
        r.cases.push_back(std::move(t));
      }
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad timing report: ") + e.what());
    }
  }
};

inline void summarize(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

/// Times `repetitions` forward passes per case after one untimed warm-up.
/// Inputs (normalized cloud, branch records) are built before timing.
inline TimingReport benchmark_inference(const models::ModelParameters& model, const std::vector<PointCloudCase>& cases,
                                        const dataset::NormalizationStats& st, int repetitions,
                                        std::uint64_t branch_seed = 0) {
  if (repetitions < 5) throw ConfigurationError("benchmark needs at least 5 repetitions");
  if (cases.empty()) throw ConfigurationError("benchmark needs at least one case");
  using clock = std::chrono::steady_clock;
  TimingReport report;
  report.repetitions = repetitions;
  std::vector<double> means;
  for (const auto& c : cases) {
    const auto cloud = models::make_cloud(dataset::normalize_case(c, st), false);
    std::optional<models::BranchInput> branch;
    if (model.kind == models::ModelKind::pigano) {
      branch = models::normalize_branch(models::select_branch_points(c, model.pigano.branch_points, branch_seed), st);
    }
    auto run = [&]() {
      Eigen::MatrixXd y = model.kind == models::ModelKind::pipn ? models::pipn_predict(model, cloud.input)
                                                                : models::pigano_predict(model, cloud.input, *branch);
      if (!y.allFinite()) throw NumericalError("non-finite prediction", "case '" + c.meta.case_id + "'");
    };
    run();
    CaseTiming t;
    t.case_id = c.meta.case_id;
    t.points = c.size();
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = clock::now();
      run();
      const auto t1 = clock::now();
      t.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    summarize(t.samples, t.mean, t.std);
    t.min = *std::min_element(t.samples.begin(), t.samples.end());
    t.max = *std::max_element(t.samples.begin(), t.samples.end());
    means.push_back(t.mean);
    report.cases.push_back(std::move(t));
  }
  summarize(means, report.mean, report.std);
  return report;
}

}  // namespace pipn::eval
