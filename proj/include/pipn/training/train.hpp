#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipn/ad/params.hpp"
#include "pipn/ad/tape.hpp"
#include "pipn/dataset/case_io.hpp"
#include "pipn/dataset/normalization.hpp"
#include "pipn/errors.hpp"
#include "pipn/models/checkpoint.hpp"
#include "pipn/models/pigano.hpp"
#include "pipn/models/pipn.hpp"
#include "pipn/training/loss.hpp"

namespace pipn::training {

struct AdamConstants {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Bias-corrected Adam. All gradients are checked before any update.
inline void adam_step(ad::ParameterSet<double>& params, const ad::GradientVector<double>& grads,
                      models::OptimizerState& state, double lr, const AdamConstants& c = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ConfigurationError("adam_step: parameter, gradient and state sizes differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) throw NumericalError("non-finite gradient", "parameter '" + params.name(i) + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m.value(i);
    auto& v = state.v.value(i);
    const auto& g = grads[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    params.value(i).array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

/// base * alpha^epoch.
inline double lr_at(int epoch, double base, double alpha) {
  if (epoch < 0) throw DomainError("epoch must be nonnegative");
  return base * std::pow(alpha, epoch);
}

struct TrainConfig {
  int epochs = 3000;
  double lr = 1e-3;
  double alpha = 0.9995;
  int batch = 4;  // cases per step for the operator model; the point-cloud model uses 1
  std::uint64_t seed = 0;
  LossWeights weights;
  double dropout = 0.0;
  double grad_clip = 0.0;   // global-norm clip, 0 = off
  int checkpoint_every = 0;  // epochs, 0 = off
  std::filesystem::path checkpoint_dir;
  int validate_every = 10;

  void validate() const {
    if (epochs <= 0) throw ConfigurationError("epochs must be positive");
    if (!(lr > 0.0)) throw ConfigurationError("learning rate must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigurationError("decay alpha must lie in (0, 1]");
    if (batch <= 0) throw ConfigurationError("batch size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigurationError("dropout must lie in [0, 1)");
    if (!(grad_clip >= 0.0)) throw ConfigurationError("gradient clip must be nonnegative");
    if (checkpoint_every < 0 || validate_every < 0) throw ConfigurationError("intervals must be nonnegative");
    if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigurationError("checkpoint interval needs a directory");
    weights.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"alpha", c.alpha},
          {"batch", c.batch},
          {"seed", c.seed},
          {"weights", {{"m", c.weights.m}, {"c", c.weights.c}, {"b", c.weights.b}, {"d", c.weights.d}}},
          {"dropout", c.dropout},
          {"grad_clip", c.grad_clip},
          {"adam", {{"beta1", AdamConstants{}.beta1}, {"beta2", AdamConstants{}.beta2}, {"eps", AdamConstants{}.eps}}}};
}

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  LossBreakdown train;
  std::optional<LossBreakdown> validation;
};

struct TrainResult {
  models::ModelParameters final_model;
  models::ModelParameters best_model;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
  dataset::NormalizationStats stats;
  models::OptimizerState optimizer;
};

/// splitmix64 finalizer over combined words.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL) ^ (c * 0xC2B2AE3D27D4EB4FULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Prepares cases for a model (branch records for the operator model, seeded
/// per case position).
inline std::vector<PreparedCase> prepare_cases(const models::ModelParameters& model,
                                               const std::vector<PointCloudCase>& cases,
                                               const dataset::NormalizationStats& st, std::uint64_t seed) {
  std::vector<PreparedCase> out;
  out.reserve(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    PrepareOptions opt;
    if (model.kind == models::ModelKind::pigano) {
      opt.branch_points = model.pigano.branch_points;
      opt.branch_seed = mix_seed(seed, 0xB7A1, i);
    }
    out.push_back(prepare_case(cases[i], st, opt));
  }
  return out;
}

/// Network output jet for a prepared case (derivatives at the collocation rows).
template <class Scalar>
ad::Jet<Scalar> forward_case(ad::Tape<Scalar>& tape, const ad::BoundParameters<Scalar>& params,
                             const models::ModelParameters& model, const PreparedCase& pc,
                             const models::ForwardOptions& opt, bool derivatives = true) {
  models::CloudInput<Scalar> in;
  in.coords = pc.cloud.input.coords.template cast<Scalar>();
  in.features = pc.cloud.input.features.template cast<Scalar>();
  in.n_deriv = derivatives ? pc.cloud.input.n_deriv : 0;
  if (model.kind == models::ModelKind::pipn) return models::pipn_forward(tape, params, model.pipn, in, opt).output;
  if (pc.branch.size() == 0) throw ConfigurationError("case '" + pc.id + "' was prepared without branch records");
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> rec = pc.branch.records.template cast<Scalar>();
  return models::pigano_forward(tape, params, model.pigano, in, rec, in.coords, in.n_deriv, opt).output;
}

/// Loss of a group of cases (mean over cases) and its parameter gradient.
inline std::pair<LossBreakdown, ad::GradientVector<double>> batch_loss(const models::ModelParameters& model,
                                                                       const std::vector<const PreparedCase*>& batch,
                                                                       const dataset::NormalizationStats& st,
                                                                       const LossWeights& w,
                                                                       const models::ForwardOptions& opt,
                                                                       bool want_gradient) {
  ad::Tape<double> tape;
  const ad::BoundParameters<double> params(tape, model.values);
  ad::Var<double> total;
  LossBreakdown sum;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    models::ForwardOptions o = opt;
    o.dropout_seed = mix_seed(opt.dropout_seed, k);
    const auto y = forward_case(tape, params, model, *batch[k], o);
    const auto terms = compute_loss(y, *batch[k], st, w);
    const auto v = terms.values(w);
    sum.l_m += v.l_m;
    sum.l_c += v.l_c;
    sum.l_b += v.l_b;
    sum.l_d += v.l_d;
    total = k == 0 ? terms.total : tape.add(total, terms.total);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const LossBreakdown mean = make_breakdown(w, sum.l_m * inv, sum.l_c * inv, sum.l_b * inv, sum.l_d * inv);
  if (!want_gradient || !std::isfinite(mean.total)) return {mean, {}};
  total = tape.scale(total, inv);
  return {mean, ad::parameter_gradient(total, params)};
}

/// Mean evaluation-mode loss over cases.
inline LossBreakdown evaluate_loss(const models::ModelParameters& model, const std::vector<PreparedCase>& cases,
                                   const dataset::NormalizationStats& st, const LossWeights& w) {
  LossBreakdown sum;
  for (const auto& pc : cases) {
    const auto v = batch_loss(model, {&pc}, st, w, {}, false).first;
    sum.l_m += v.l_m;
    sum.l_c += v.l_c;
    sum.l_b += v.l_b;
    sum.l_d += v.l_d;
  }
  const double inv = 1.0 / static_cast<double>(cases.size());
  return make_breakdown(w, sum.l_m * inv, sum.l_c * inv, sum.l_b * inv, sum.l_d * inv);
}

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"l_m", b.l_m}, {"l_c", b.l_c}, {"l_b", b.l_b}, {"l_d", b.l_d}, {"total", b.total}};
}

inline LossBreakdown breakdown_from_json(const nlohmann::json& j) {
  return {j.at("l_m").get<double>(), j.at("l_c").get<double>(), j.at("l_b").get<double>(), j.at("l_d").get<double>(),
          j.at("total").get<double>()};
}

inline nlohmann::json history_to_json(const std::vector<EpochRecord>& h) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : h) {
    nlohmann::json j{{"epoch", r.epoch}, {"lr", r.lr}, {"train", to_json(r.train)}};
    if (r.validation) j["validation"] = to_json(*r.validation);
    a.push_back(std::move(j));
  }
  return a;
}

inline std::vector<EpochRecord> history_from_json(const nlohmann::json& a) {
  std::vector<EpochRecord> h;
  for (const auto& j : a) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.lr = j.at("lr").get<double>();
    r.train = breakdown_from_json(j.at("train"));
    if (j.contains("validation")) r.validation = breakdown_from_json(j["validation"]);
    h.push_back(r);
  }
  return h;
}

/// Text table: epoch,lr,l_m,l_c,l_b,l_d,total[,val_l_m,...,val_total].
inline void write_history(const std::vector<EpochRecord>& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,lr,l_m,l_c,l_b,l_d,total,val_l_m,val_l_c,val_l_b,val_l_d,val_total\n";
  using dataset::format_double;
  for (const auto& r : h) {
    out << r.epoch << ',' << format_double(r.lr) << ',' << format_double(r.train.l_m) << ','
        << format_double(r.train.l_c) << ',' << format_double(r.train.l_b) << ',' << format_double(r.train.l_d) << ','
        << format_double(r.train.total);
    if (r.validation) {
      const auto& v = *r.validation;
      out << ',' << format_double(v.l_m) << ',' << format_double(v.l_c) << ',' << format_double(v.l_b) << ','
          << format_double(v.l_d) << ',' << format_double(v.total);
    } else {
      out << ",,,,,";
    }
    out << '\n';
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

/// Called after every epoch; returning false stops training early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

struct TrainState {
  int epochs_done = 0;
  std::vector<EpochRecord> history;
  models::OptimizerState optimizer;
  int best_epoch = 0;
  double best_validation = std::numeric_limits<double>::infinity();
};

inline models::Checkpoint make_checkpoint(const models::ModelParameters& model, const TrainState& s,
                                          const dataset::NormalizationStats& st, const TrainConfig& cfg) {
  models::Checkpoint ck;
  ck.model = model;
  ck.epoch = s.epochs_done;
  ck.stats = st;
  ck.optimizer = s.optimizer;
  ck.extra = {{"train_config", to_json(cfg)},
              {"history", history_to_json(s.history)},
              {"best_epoch", s.best_epoch},
              {"best_validation", std::isfinite(s.best_validation) ? nlohmann::json(s.best_validation)
                                                                   : nlohmann::json(nullptr)}};
  return ck;
}

/// Runs the training loop from `init` (fresh) or from `resume` (a checkpoint
/// written by this loop). Each epoch visits the training cases in a seeded
/// order, one case per step for the point-cloud model and `batch` cases per
/// step for the operator model. Validation (evaluation mode) runs every
/// `validate_every` epochs and on the last epoch; the best model is the one
/// with the lowest validation total, or the final model without validation.
inline TrainResult train(models::ModelParameters init, const std::vector<PointCloudCase>& train_cases,
                         const std::vector<PointCloudCase>& validation_cases, const dataset::NormalizationStats& st,
                         const TrainConfig& cfg, const std::optional<models::Checkpoint>& resume = std::nullopt,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_cases.empty()) throw ConfigurationError("no training cases");
  models::ModelParameters model = resume ? resume->model : std::move(init);
  if (model.kind == models::ModelKind::pipn) {
    model.pipn.dropout = cfg.dropout;
  } else {
    model.pigano.dropout = cfg.dropout;
  }
  TrainState s;
  s.optimizer = models::zero_optimizer_state(model.values);
  if (resume) {
    if (!resume->optimizer) throw ConfigurationError("checkpoint has no optimizer state to resume from");
    s.epochs_done = resume->epoch;
    s.optimizer = *resume->optimizer;
    s.history = history_from_json(resume->extra.value("history", nlohmann::json::array()));
    s.best_epoch = resume->extra.value("best_epoch", 0);
    const auto& bv = resume->extra.value("best_validation", nlohmann::json(nullptr));
    if (!bv.is_null()) s.best_validation = bv.get<double>();
  }
  const auto prepared = prepare_cases(model, train_cases, st, cfg.seed);
  const auto prepared_val = prepare_cases(model, validation_cases, st, mix_seed(cfg.seed, 0x7A1));
  const int per_step = model.kind == models::ModelKind::pipn ? 1 : cfg.batch;

  TrainResult result;
  result.best_model = model;
  if (resume && s.best_epoch > 0 && std::filesystem::exists(cfg.checkpoint_dir / "best")) {
    result.best_model = models::load_checkpoint(cfg.checkpoint_dir / "best").model;
  }
  auto save = [&](const std::string& name, const models::ModelParameters& m) {
    models::save_checkpoint(make_checkpoint(m, s, st, cfg), cfg.checkpoint_dir / name);
  };

  for (int epoch = s.epochs_done; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.lr, cfg.alpha);
    std::vector<std::size_t> order(prepared.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 1));
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    int steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(per_step), ++steps) {
      std::vector<const PreparedCase*> batch;
      for (std::size_t k = b0; k < std::min(order.size(), b0 + static_cast<std::size_t>(per_step)); ++k) {
        batch.push_back(&prepared[order[k]]);
      }
      models::ForwardOptions opt{true, mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 2 + steps)};
      auto [loss, grad] = batch_loss(model, batch, st, cfg.weights, opt, true);
      if (!std::isfinite(loss.total)) {
        throw NumericalError("non-finite loss", "epoch " + std::to_string(epoch + 1) + " minibatch " +
                                                    std::to_string(steps));
      }
      if (cfg.grad_clip > 0.0) {
        const double norm = grad.norm();
        if (norm > cfg.grad_clip) {
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= cfg.grad_clip / norm;
        }
      }
      adam_step(model.values, grad, s.optimizer, lr);
      sum.l_m += loss.l_m;
      sum.l_c += loss.l_c;
      sum.l_b += loss.l_b;
      sum.l_d += loss.l_d;
    }
    const double inv = 1.0 / steps;
    EpochRecord rec{epoch + 1, lr, make_breakdown(cfg.weights, sum.l_m * inv, sum.l_c * inv, sum.l_b * inv,
                                                  sum.l_d * inv),
                    std::nullopt};
    const bool last = epoch + 1 == cfg.epochs;
    if (!prepared_val.empty() && cfg.validate_every > 0 && ((epoch + 1) % cfg.validate_every == 0 || last)) {
      rec.validation = evaluate_loss(model, prepared_val, st, cfg.weights);
      if (rec.validation->total < s.best_validation) {
        s.best_validation = rec.validation->total;
        s.best_epoch = epoch + 1;
        result.best_model = model;
        s.epochs_done = epoch + 1;
        if (!cfg.checkpoint_dir.empty()) save("best", model);
      }
    }
    s.history.push_back(rec);
    s.epochs_done = epoch + 1;
    if (cfg.checkpoint_every > 0 && (s.epochs_done % cfg.checkpoint_every == 0 || last)) save("last", model);
    if (on_epoch && !on_epoch(rec)) break;
  }
  if (s.best_epoch == 0) {
    result.best_model = model;
    result.best_epoch = s.epochs_done;
  } else {
    result.best_epoch = s.best_epoch;
  }
  result.final_model = std::move(model);
  result.history = std::move(s.history);
  result.stats = st;
  result.optimizer = std::move(s.optimizer);
  return result;
}

}  // namespace pipn::training
