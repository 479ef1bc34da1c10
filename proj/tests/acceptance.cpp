// Acceptance run: one PASS/FAIL line per criterion, details indented below.
//
//   acceptance            all criteria
//   acceptance 1 4 6      a subset
//
// PIPN_FULL_ACCEPTANCE=1 trains the manufactured-solution model for 3000
// epochs against the 3e-2 bound instead of the 300-epoch, 8e-2 gate.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "pipn/dataset/generators.hpp"
#include "pipn/dataset/ingest.hpp"
#include "pipn/eval/metrics.hpp"
#include "pipn/eval/oracles.hpp"
#include "pipn/eval/timing.hpp"
#include "pipn/models/pigano.hpp"
#include "pipn/training/train.hpp"

#ifndef PIPN_CLI_PATH
#error "PIPN_CLI_PATH must name the pipn executable"
#endif

namespace fs = std::filesystem;
using namespace pipn;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;
};

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(3) << v;
  return s.str();
}

std::string check_line(const std::string& what, double value, double limit) {
  return what + " = " + sci(value) + (value < limit ? " < " : " >= ") + sci(limit);
}

bool full_mode() {
  const char* s = std::getenv("PIPN_FULL_ACCEPTANCE");
  return s && std::string(s) == "1";
}

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("pipn_acceptance_" + std::to_string(::getpid())) / tag;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double loss_of(const models::ModelParameters& model, const training::PreparedCase& pc,
               const dataset::NormalizationStats& st, const training::LossWeights& w) {
  return training::batch_loss(model, {&pc}, st, w, {}, false).first.l_m;
}

// ------------------------------------------------------------------ 1

Outcome criterion_1() {
  Outcome o;
  o.pass = true;
  for (double chi : {0.0, 1.0}) {
    const auto r = eval::mms_residual_oracle(chi);
    const std::string tag = chi == 0.0 ? "chi=0" : "chi=1";
    o.pass = o.pass && r.momentum < 1e-9 && r.continuity < 1e-12;
    o.details.push_back(check_line("max |momentum residual| (" + tag + ")", r.momentum, 1e-9));
    o.details.push_back(check_line("max |continuity residual| (" + tag + ")", r.continuity, 1e-12));
  }
  return o;
}

// ------------------------------------------------------------------ 2

Outcome criterion_2() {
  Outcome o;
  const auto d = eval::pipn_derivative_oracle(models::PipnConfig{}, 2024);
  const auto g = eval::loss_gradient_oracle(2024);
  o.pass = d.first < 1e-5 && d.second < 1e-3 && g.max_relative < 1e-4 && g.parameters <= 200;
  o.details.push_back(std::to_string(d.checked) + " points, " + std::to_string(d.skipped) +
                      " candidate(s) skipped for a max-pool owner change inside the stencil");
  o.details.push_back(check_line("first derivative relative error", d.first, 1e-5));
  o.details.push_back(check_line("second derivative relative error", d.second, 1e-3));
  o.details.push_back(check_line("loss gradient relative error (" + std::to_string(g.parameters) + " parameters)",
                                 g.max_relative, 1e-4));
  return o;
}

// ------------------------------------------------------------------ 3

Outcome criterion_3() {
  Outcome o;
  const bool full = full_mode();
  const int epochs = full ? 3000 : 300;
  const double limit = full ? 3e-2 : 8e-2;
  const dataset::MmsOptions opt;  // 667 interior, 168 boundary
  const auto cases = dataset::make_mms_cases(6, 31, opt);
  const auto unseen = dataset::make_mms_case(dataset::mms_unseen_composite(), "mms_unseen", 32, opt);
  const auto st = dataset::compute_normalization(cases);

  models::PipnConfig pc;
  pc.activation = ad::Activation::tanh;
  training::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.alpha = 0.9995;
  cfg.seed = 33;
  cfg.weights = {1, 1, 1, 0};
  const auto t0 = std::chrono::steady_clock::now();
  auto progress = [&](const training::EpochRecord& r) {
    if (r.epoch % 25 == 0 || r.epoch == 1) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "    [3] epoch " << r.epoch << "/" << epochs << " loss " << sci(r.train.total) << " ("
                << std::fixed << std::setprecision(0) << s << " s)" << std::defaultfloat << std::endl;
    }
    return true;
  };
  const auto result = training::train(models::init_parameters(pc, 33), cases, {}, st, cfg, std::nullopt, progress);
  const auto& model = result.final_model;

  std::vector<eval::RegionMaeTable> tables;
  for (const auto& c : cases) tables.push_back(eval::evaluate_case(eval::predict_case(model, c, st), c));
  const auto train_table = eval::pool_tables(tables);
  const auto unseen_table = eval::evaluate_case(eval::predict_case(model, unseen, st), unseen);

  o.details.push_back(std::string(full ? "full run: " : "CI gate: ") + std::to_string(epochs) + " epochs, " +
                      std::to_string(cases.size()) + " training shapes, " + std::to_string(opt.interior) + "/" +
                      std::to_string(opt.boundary) + " points, tanh, alpha 0.9995, final loss " +
                      sci(result.history.back().train.total));
  o.pass = true;
  for (const auto* name : {"u_x", "u_y", "p"}) {
    const double a = train_table.at(name, "global"), b = unseen_table.at(name, "global");
    o.pass = o.pass && a <= limit && b <= limit;
    o.details.push_back(std::string(name) + ": training MAE " + sci(a) + ", unseen composite MAE " + sci(b) +
                        " (limit " + sci(limit) + ")");
  }
  return o;
}

// ------------------------------------------------------------------ 4

Outcome criterion_4() {
  Outcome o;
  const auto c = dataset::make_mms_cases(1, 41).front();
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  models::PipnConfig cfg;
  cfg.activation = ad::Activation::tanh;
  const auto model = models::init_parameters(cfg, 42);
  const training::LossWeights w{1, 1, 1, 0};
  auto base = training::prepare_case(c, st);
  base.forcing.resize(0, 0);

  auto porous_zero = base;
  porous_zero.chi.setOnes();
  porous_zero.D.setZero();
  porous_zero.F.setZero();
  auto fluid = base;
  fluid.chi.setZero();
  const double a = loss_of(model, porous_zero, st, w), b = loss_of(model, fluid, st, w);
  const double gap = std::abs(a - b) / std::max(1.0, std::abs(b));

  dataset::DuctOptions dopt;
  dopt.interior = 400;
  dopt.boundary = 120;
  const auto duct = dataset::make_duct_cases(1, 43, dopt).front();
  const auto dst = dataset::compute_normalization(std::vector<PointCloudCase>{duct});
  auto free0 = training::prepare_case(duct, dst);
  free0.chi.setZero();
  free0.D.setZero();
  free0.F.setZero();
  double spread = 0.0;
  const double ref = loss_of(model, free0, dst, w);
  for (const auto& [D, F] : std::vector<std::pair<double, double>>{{1000.0, 10.0}, {14000.0, 50.0}, {5.0, 0.1}}) {
    auto moved = free0;
    moved.D.setConstant(D);
    moved.F.setConstant(F);
    spread = std::max(spread, std::abs(loss_of(model, moved, dst, w) - ref));
  }
  o.pass = gap <= 1e-12 && spread == 0.0;
  o.details.push_back("l_m(chi=1, D=F=0) vs l_m(chi=0): relative gap " + sci(gap) + " (limit 1e-12)");
  o.details.push_back("porous-free case, l_m spread over three (D, F) pairs: " + sci(spread) + " (must be 0)");
  return o;
}

// ------------------------------------------------------------------ 5

Outcome criterion_5() {
  Outcome o;
  const models::PiganoConfig gcfg;
  bool pass_a = true, pass_b = false, pass_c = false;

  // (a) latents under point and record permutations.
  {
    dataset::DuctOptions dopt;
    dopt.interior = 500;
    dopt.boundary = 150;
    const auto c = dataset::make_duct_cases(1, 51, dopt).front();
    const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
    const auto model = models::init_parameters(gcfg, 52);
    const auto cloud = models::make_cloud(dataset::normalize_case(c, st), false).input;
    const auto branch = models::normalize_branch(models::select_branch_points(c, gcfg.branch_points, 53), st);
    std::mt19937_64 rng(54);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<int> pg(static_cast<std::size_t>(cloud.size())), pr(static_cast<std::size_t>(branch.records.rows()));
      std::iota(pg.begin(), pg.end(), 0);
      std::iota(pr.begin(), pr.end(), 0);
      std::shuffle(pg.begin(), pg.end(), rng);
      std::shuffle(pr.begin(), pr.end(), rng);
      auto cloud2 = cloud;
      for (std::size_t j = 0; j < pg.size(); ++j) {
        cloud2.coords.row(static_cast<Eigen::Index>(j)) = cloud.coords.row(pg[j]);
        cloud2.features.row(static_cast<Eigen::Index>(j)) = cloud.features.row(pg[j]);
      }
      Eigen::MatrixXd rec2(branch.records.rows(), branch.records.cols());
      for (std::size_t j = 0; j < pr.size(); ++j) rec2.row(static_cast<Eigen::Index>(j)) = branch.records.row(pr[j]);
      ad::Tape<double> t1, t2;
      const ad::BoundParameters<double> p1(t1, model.values), p2(t2, model.values);
      const auto a = models::pigano_forward(t1, p1, gcfg, cloud, branch.records, cloud.coords, 0);
      const auto b = models::pigano_forward(t2, p2, gcfg, cloud2, rec2, cloud.coords, 0);
      pass_a = pass_a && a.geometry_latent.value() == b.geometry_latent.value() &&
               a.branch_latent.value() == b.branch_latent.value() && a.output.m.value() == b.output.m.value();
    }
    o.details.push_back(std::string(pass_a ? "(a) pass" : "(a) FAIL") +
                        ": geometry latent, branch latent and outputs bitwise equal under 5 random permutations");
  }

  // (b) data fit of one manufactured case.
  {
    dataset::MmsOptions mo;
    mo.interior = 400;
    mo.boundary = 120;
    auto spec = dataset::mms_shape_family()[0];
    spec.scale = 0.8;
    auto c = dataset::make_mms_case(spec, "overfit", 55, mo);
    dataset::select_observations(c, c.size(), 56);
    const std::vector<PointCloudCase> cases{c};
    const auto st = dataset::compute_normalization(cases);
    training::TrainConfig cfg;
    cfg.seed = 57;
    cfg.batch = 1;
    cfg.weights = {0, 0, 0, 1};
    cfg.validate_every = 0;
    auto model = models::init_parameters(gcfg, 57);
    const std::uint64_t branch_seed = training::mix_seed(cfg.seed, 0xB7A1, 0);
    std::optional<models::Checkpoint> resume;
    double worst = 0.0;
    int reached = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int stop = 100; stop <= 2000; stop += 100) {
      cfg.epochs = stop;
      const auto r = training::train(model, cases, {}, st, cfg, resume);
      model = r.final_model;
      models::Checkpoint ck;
      ck.model = model;
      ck.epoch = stop;
      ck.stats = st;
      ck.optimizer = r.optimizer;
      ck.extra = {{"history", training::history_to_json(r.history)}};
      resume = std::move(ck);
      const auto t = eval::evaluate_case(eval::predict_case(model, c, st, branch_seed), c);
      worst = std::max({t.at("u_x", "global"), t.at("u_y", "global"), t.at("p", "global")});
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "    [5b] epoch " << stop << " worst field MAE " << sci(worst) << " (" << std::fixed
                << std::setprecision(0) << s << " s)" << std::defaultfloat << std::endl;
      if (worst < 5e-3) {
        reached = stop;
        break;
      }
    }
    pass_b = reached > 0;
    o.details.push_back(std::string(pass_b ? "(b) pass" : "(b) FAIL") + ": data-only fit (lambda_d = 1) of one " +
                        std::to_string(c.size()) + "-point case, worst per-field MAE " + sci(worst) +
                        (pass_b ? " < 5e-3 after " + std::to_string(reached) + " epochs" : " after 2000 epochs"));
  }

  // (c) inlet-velocity sensitivity.
  {
    dataset::DuctOptions dopt;
    dopt.interior = 300;
    dopt.boundary = 100;
    const auto c = dataset::make_duct_cases(1, 58, dopt).front();
    auto faster = c;
    faster.meta.inlet_speed = c.meta.inlet_speed * 1.5;
    const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
    double margin = 0.0;
    for (std::uint64_t seed = 60; seed < 65; ++seed) {
      const auto model = models::init_parameters(gcfg, seed);
      auto predict = [&](const PointCloudCase& k) {
        const auto cloud = models::make_cloud(dataset::normalize_case(k, st), false);
        return models::pigano_predict(model, cloud.input,
                                      models::normalize_branch(models::select_branch_points(k, gcfg.branch_points, 1), st));
      };
      const double m = (predict(faster) - predict(c)).cwiseAbs().maxCoeff();
      margin = seed == 60 ? m : std::min(margin, m);
    }
    pass_c = margin > 1e-6;
    o.details.push_back(std::string(pass_c ? "(c) pass" : "(c) FAIL") +
                        ": inlet speed x1.5 moves normalized outputs by at least " + sci(margin) +
                        " over 5 random initializations (limit 1e-6)");
  }
  o.pass = pass_a && pass_b && pass_c;
  return o;
}

// ------------------------------------------------------------------ 6

Outcome criterion_6() {
  Outcome o;
  const double n = eval::normalization_roundtrip_oracle(61);
  const double r = eval::residual_scaling_oracle(62);
  o.pass = n < 1e-12 && r < 1e-10;
  o.details.push_back(check_line("denormalize(normalize(x)) relative error", n, 1e-12));
  o.details.push_back(check_line("scaled vs physical residual relative error", r, 1e-10));
  return o;
}

// ------------------------------------------------------------ 7 and 8

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PIPN_CLI_PATH) + " " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : (rc == -1 ? -1 : WEXITSTATUS(rc));
}

Outcome criterion_7() {
  Outcome o;
  const fs::path dir = scratch("bench");
  const int rc = run_cli("bench --points 1200 --reps 20 --seed 71 --out \"" + dir.string() + "\"", dir / "log.txt");
  if (rc != 0) {
    o.details.push_back("bench exited with code " + std::to_string(rc));
    return o;
  }
  std::ifstream in(dir / "timing.json");
  nlohmann::json j;
  in >> j;
  const auto r = eval::TimingReport::from_json(j);
  const auto& c = r.cases.front();
  o.pass = c.points == 1200 && c.samples.size() >= 20 && c.mean < 0.1;
  o.details.push_back("default PIPN, " + std::to_string(c.points) + " points, " + std::to_string(c.samples.size()) +
                      " runs: " + check_line("mean forward time [s]", c.mean, 0.1) + ", std " + sci(c.std));
  fs::remove_all(dir);
  return o;
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  auto files = [](const fs::path& root) {
    std::set<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file()) out.insert(fs::relative(e.path(), root));
    }
    return out;
  };
  const auto fa = files(a), fb = files(b);
  if (fa != fb) {
    why = "file lists differ";
    return false;
  }
  for (const auto& f : fa) {
    std::ifstream x(a / f, std::ios::binary), y(b / f, std::ios::binary);
    const std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    if (sx != sy) {
      why = f.string() + " differs";
      return false;
    }
  }
  why = std::to_string(fa.size()) + " files identical";
  return true;
}

Outcome criterion_8() {
  Outcome o;
  const fs::path root = scratch("determinism");
  o.pass = true;
  for (int run = 0; run < 2; ++run) {
    const fs::path r = root / ("run" + std::to_string(run));
    const std::string q = "\"" + r.string() + "\"";
    const std::vector<std::pair<std::string, std::string>> steps{
        {"gen-mms", "gen-mms --cases 5 --seed 7 --out " + q + "/data"},
        {"train", "train --data " + q + "/data --epochs 50 --seed 7 --out " + q + "/train"},
        {"eval", "eval --data " + q + "/data --checkpoint " + q + "/train/last --seed 7 --out " + q + "/eval"}};
    for (const auto& [name, args] : steps) {
      const auto t0 = std::chrono::steady_clock::now();
      const int rc = run_cli(args, root / (name + std::to_string(run) + ".log"));
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "    [8] run " << run + 1 << " " << name << " exit " << rc << " (" << std::fixed
                << std::setprecision(0) << s << " s)" << std::defaultfloat << std::endl;
      if (rc != 0) {
        o.pass = false;
        o.details.push_back(name + " exited with code " + std::to_string(rc));
        return o;
      }
    }
  }
  for (const char* part : {"data", "train", "eval"}) {
    std::string why;
    const bool same = same_tree(root / "run0" / part, root / "run1" / part, why);
    o.pass = o.pass && same;
    o.details.push_back(std::string(part) + ": " + why);
  }
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"MMS residual oracle", criterion_1},
      {"spatial derivatives and loss gradient vs finite differences", criterion_2},
      {"MMS training reaches the MAE bound on training and unseen geometry", criterion_3},
      {"porous gating equivalence", criterion_4},
      {"operator model: permutation invariance, single-case fit, branch sensitivity", criterion_5},
      {"normalization and residual-scaling round trips", criterion_6},
      {"1200-point forward pass under 0.1 s", criterion_7},
      {"gen-mms, train and eval are bitwise reproducible", criterion_8}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.details.push_back(std::string("error: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first << " (" << std::fixed
              << std::setprecision(1) << s << " s)" << std::defaultfloat << std::endl;
    for (const auto& d : o.details) std::cout << "    " << d << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() / ("pipn_acceptance_" + std::to_string(::getpid())));
  return all ? 0 : 1;
}
