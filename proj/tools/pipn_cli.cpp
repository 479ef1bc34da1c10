// pipn: generate datasets, train, evaluate, benchmark and self-check.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipn/cli/config.hpp"
#include "pipn/dataset/case_io.hpp"
#include "pipn/dataset/generators.hpp"
#include "pipn/dataset/ingest.hpp"
#include "pipn/dataset/split.hpp"
#include "pipn/eval/metrics.hpp"
#include "pipn/eval/oracles.hpp"
#include "pipn/eval/timing.hpp"
#include "pipn/models/checkpoint.hpp"
#include "pipn/training/train.hpp"

namespace fs = std::filesystem;
using namespace pipn;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<fs::path> config;
};

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--seed", c.seed, "Seed for every random choice (overrides PIPN_SEED and the config file)");
  if (with_out) app->add_option("--out", c.out, "Output directory (overrides PIPN_OUTPUT_DIR and the config file)");
  app->add_option("--config", c.config, "Key-value configuration file")->check(CLI::ExistingFile);
}

/// Config file, then environment, then flags.
cli::RunConfig resolve(const Common& c) {
  auto rc = cli::load_run_config(c.config);
  if (c.seed) rc.seed = c.seed;
  if (c.out) rc.output_dir = c.out;
  return rc;
}

std::uint64_t seed_of(const cli::RunConfig& rc) { return rc.seed.value_or(0); }

fs::path require_out(const cli::RunConfig& rc) {
  if (!rc.output_dir) throw ConfigurationError("no output directory: pass --out, set PIPN_OUTPUT_DIR or output_dir");
  return *rc.output_dir;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad JSON in " + path.string() + ": " + e.what());
  }
}

void save_cases(const std::vector<PointCloudCase>& cases, const fs::path& out) {
  fs::create_directories(out);
  for (const auto& c : cases) {
    fs::remove_all(out / c.meta.case_id);
    dataset::save_case(c, out / c.meta.case_id);
  }
  std::cout << "wrote " << cases.size() << " case(s) to " << out.string() << '\n';
}

const PointCloudCase& find_case(const std::vector<PointCloudCase>& cases, const std::string& id) {
  for (const auto& c : cases) {
    if (c.meta.case_id == id) return c;
  }
  throw ConfigurationError("unknown case id '" + id + "'");
}

std::vector<PointCloudCase> pick(const std::vector<PointCloudCase>& cases, const std::vector<std::string>& ids) {
  std::vector<PointCloudCase> out;
  for (const auto& id : ids) out.push_back(find_case(cases, id));
  return out;
}

nlohmann::json split_to_json(const dataset::DatasetSplit& s) {
  return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

dataset::DatasetSplit split_from_json(const nlohmann::json& j) {
  try {
    dataset::DatasetSplit s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.validation = j.at("validation").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad split file: ") + e.what());
  }
}

// ---------------------------------------------------------------- gen-mms

struct GenMms {
  Common common;
  int cases = 6;
  std::optional<int> interior, boundary;
  int observations = 0;
  bool unseen = false;
};

int run_gen_mms(const GenMms& g) {
  auto rc = resolve(g.common);
  if (g.interior) rc.mms.interior = *g.interior;
  if (g.boundary) rc.mms.boundary = *g.boundary;
  const std::uint64_t seed = seed_of(rc);
  std::vector<PointCloudCase> cases;
  if (g.unseen) {
    cases.push_back(dataset::make_mms_case(dataset::mms_unseen_composite(), "mms_unseen", seed, rc.mms));
  } else {
    cases = dataset::make_mms_cases(g.cases, seed, rc.mms);
  }
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (g.observations > 0) dataset::select_observations(cases[i], g.observations, training::mix_seed(seed, 0x0B5, i));
  }
  save_cases(cases, require_out(rc));
  return 0;
}

// --------------------------------------------------------------- gen-duct

struct GenDuct {
  Common common;
  int cases = 10;
  std::optional<int> interior, boundary;
};

int run_gen_duct(const GenDuct& g) {
  auto rc = resolve(g.common);
  if (g.interior) rc.duct.interior = *g.interior;
  if (g.boundary) rc.duct.boundary = *g.boundary;
  save_cases(dataset::make_duct_cases(g.cases, seed_of(rc), rc.duct), require_out(rc));
  return 0;
}

// ------------------------------------------------------------------ train

struct Train {
  Common common;
  fs::path data;
  std::optional<std::string> model;
  std::optional<int> epochs;
  bool no_split = false;
  bool resume = false;
};

int run_train(const Train& t) {
  auto rc = resolve(t.common);
  if (t.model) rc.model = models::model_kind_from_string(*t.model);
  if (t.epochs) rc.train.epochs = *t.epochs;
  const std::uint64_t seed = seed_of(rc);
  const fs::path out = require_out(rc);
  rc.train.seed = seed;
  rc.train.checkpoint_dir = out;
  if (rc.train.checkpoint_every == 0) rc.train.checkpoint_every = rc.train.epochs;
  rc.train.validate();

  const auto all = dataset::load_dataset(t.data);
  std::vector<std::string> ids;
  for (const auto& c : all) ids.push_back(c.meta.case_id);
  dataset::DatasetSplit split;
  if (t.no_split || all.size() < 5) {
    if (!t.no_split) std::cout << "fewer than 5 cases: training on all of them without validation\n";
    split.train = ids;
  } else {
    split = dataset::split_dataset(ids, seed);
  }
  auto train_cases = pick(all, split.train);
  const auto val_cases = pick(all, split.validation);
  if (rc.observations > 0) {
    for (std::size_t i = 0; i < train_cases.size(); ++i) {
      dataset::select_observations(train_cases[i], rc.observations, training::mix_seed(seed, 0x0B5, i));
    }
  }
  const auto st = dataset::compute_normalization(all, split.train, split);

  models::ModelParameters init = rc.model == models::ModelKind::pipn ? models::init_parameters(rc.pipn, seed)
                                                                     : models::init_parameters(rc.pigano, seed);
  std::optional<models::Checkpoint> resume;
  if (t.resume) {
    resume = models::load_checkpoint(out / "last");
    if (resume->model.kind != rc.model) throw ConfigurationError("checkpoint model kind differs from --model");
  }

  fs::create_directories(out);
  write_text(out / "split.json", split_to_json(split).dump(2) + "\n");
  write_text(out / "stats.json", dataset::to_json(st).dump(2) + "\n");
  write_text(out / "run.json", rc.to_json().dump(2) + "\n");

  std::cout << "training " << models::to_string(rc.model) << " (" << init.values.count() << " parameters) on "
            << train_cases.size() << " case(s), " << val_cases.size() << " for validation, " << rc.train.epochs
            << " epochs\n";
  const int log_every = std::max(1, rc.log_every);
  auto log = [&](const training::EpochRecord& r) {
    if (r.epoch % log_every == 0 || r.epoch == rc.train.epochs || r.epoch == 1) {
      std::cout << "epoch " << r.epoch << "/" << rc.train.epochs << "  lr " << std::setprecision(4) << r.lr
                << "  loss " << r.train.total;
      if (r.validation) std::cout << "  val " << r.validation->total;
      std::cout << std::endl;
    }
    return true;
  };
  const auto result = training::train(std::move(init), train_cases, val_cases, st, rc.train, resume, log);
  training::write_history(result.history, out / "history.csv");
  std::cout << "best epoch " << result.best_epoch << "; checkpoints in " << out.string() << '\n';
  return 0;
}

// ------------------------------------------------------------------- eval

struct Eval {
  Common common;
  fs::path data;
  std::optional<fs::path> checkpoint, predicted;
  std::string subset = "all";
};

std::string prediction_csv(const PointCloudCase& c, const FlowField& pred) {
  const auto names = eval::field_names(c.dim);
  std::string s;
  for (int k = 0; k < c.dim; ++k) s += std::string(k ? "," : "") + "xyz"[k];
  s += ",chi,boundary";
  for (const auto& n : names) s += "," + n;
  for (const auto& n : names) s += ",ref_" + n;
  for (const auto& n : names) s += ",abs_err_" + n;
  s += '\n';
  using dataset::format_double;
  for (int i = 0; i < c.size(); ++i) {
    for (int k = 0; k < c.dim; ++k) s += (k ? "," : "") + format_double(c.coords(i, k));
    s += "," + format_double(c.chi(i)) + "," + (c.is_boundary(i) ? "1" : "0");
    auto value = [&](const FlowField& f, int k) { return k < c.dim ? f.u(i, k) : f.p(i); };
    for (int k = 0; k <= c.dim; ++k) s += "," + format_double(value(pred, k));
    for (int k = 0; k <= c.dim; ++k) s += "," + format_double(value(*c.reference, k));
    for (int k = 0; k <= c.dim; ++k) s += "," + format_double(std::abs(value(pred, k) - value(*c.reference, k)));
    s += '\n';
  }
  return s;
}

int run_eval(const Eval& e) {
  if (!e.checkpoint == !e.predicted) throw ConfigurationError("pass exactly one of --checkpoint and --predicted");
  auto rc = resolve(e.common);
  const fs::path out = require_out(rc);
  auto cases = dataset::load_dataset(e.data);
  if (e.subset != "all") {
    if (!e.checkpoint) throw ConfigurationError("--subset needs --checkpoint (the split is stored next to it)");
    const auto split = split_from_json(read_json(e.checkpoint->parent_path() / "split.json"));
    const auto& ids = e.subset == "train" ? split.train : (e.subset == "validation" ? split.validation : split.test);
    cases = pick(cases, ids);
    if (cases.empty()) throw ConfigurationError("subset '" + e.subset + "' is empty");
  }

  std::optional<models::Checkpoint> ck;
  std::vector<PointCloudCase> predicted;
  if (e.checkpoint) {
    ck = models::load_checkpoint(*e.checkpoint);
    if (!ck->stats) throw FormatError("checkpoint has no normalization statistics");
  } else {
    predicted = dataset::load_dataset(*e.predicted);
  }

  std::vector<eval::RegionMaeTable> tables;
  std::vector<double> ds;
  std::string per_case;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    if (!c.reference) throw ConfigurationError("case '" + c.meta.case_id + "' has no reference fields");
    FlowField pred;
    if (ck) {
      pred = eval::predict_case(ck->model, c, *ck->stats, training::mix_seed(seed_of(rc), 0xE7A1, i));
    } else {
      const auto& p = find_case(predicted, c.meta.case_id);
      if (!p.reference) throw ConfigurationError("predicted case '" + p.meta.case_id + "' has no fields");
      if (p.size() != c.size()) throw ConfigurationError("predicted case '" + p.meta.case_id + "' has a different size");
      pred = *p.reference;
    }
    const auto t = eval::evaluate_case(pred, c);
    write_text(out / "cases" / (c.meta.case_id + ".csv"), eval::to_csv(t));
    write_text(out / "predictions" / (c.meta.case_id + ".csv"), prediction_csv(c, pred));
    per_case += "case " + c.meta.case_id + "\n" + eval::to_text(t) + "\n";
    tables.push_back(t);
    ds.push_back(c.meta.porous.D);
  }
  const auto pooled = eval::pool_tables(tables);
  const auto grouped = eval::group_errors_by_coefficient(tables, ds);
  write_text(out / "mae.csv", eval::to_csv(pooled));
  write_text(out / "mae.txt", eval::to_text(pooled));
  write_text(out / "cases.txt", per_case);
  std::string grouped_text;
  for (const auto& region : pooled.regions) {
    bool any = false;
    for (const auto& t : grouped.tables) any = any || t.is_present(region);
    if (!any) continue;
    write_text(out / ("grouped_D_" + region + ".csv"), eval::grouped_to_csv(grouped, region));
    grouped_text += region + "\n" + eval::grouped_to_text(grouped, region) + "\n";
  }
  write_text(out / "grouped_D.txt", grouped_text);
  std::cout << "MAE over " << cases.size() << " case(s), physical units\n" << eval::to_text(pooled);
  return 0;
}

// ------------------------------------------------------------------ bench

struct Bench {
  Common common;
  std::optional<fs::path> checkpoint, data;
  std::optional<std::string> model;
  int points = 1200;
  int reps = 20;
  std::optional<double> solver_reference;
};

int run_bench(const Bench& b) {
  auto rc = resolve(b.common);
  if (b.model) rc.model = models::model_kind_from_string(*b.model);
  const std::uint64_t seed = seed_of(rc);
  std::vector<PointCloudCase> cases;
  if (b.data) {
    cases = dataset::load_dataset(*b.data);
  } else {
    if (b.points < 10) throw ConfigurationError("--points must be at least 10");
    auto o = rc.mms;
    o.interior = static_cast<int>(std::lround(b.points * 667.0 / 835.0));
    o.boundary = b.points - o.interior;
    cases = dataset::make_mms_cases(1, seed, o);
  }
  models::ModelParameters model;
  dataset::NormalizationStats st;
  if (b.checkpoint) {
    auto ck = models::load_checkpoint(*b.checkpoint);
    model = std::move(ck.model);
    st = ck.stats ? *ck.stats : dataset::compute_normalization(cases);
  } else {
    model = rc.model == models::ModelKind::pipn ? models::init_parameters(rc.pipn, seed)
                                                : models::init_parameters(rc.pigano, seed);
    st = dataset::compute_normalization(cases);
  }
  auto report = eval::benchmark_inference(model, cases, st, b.reps, seed);
  report.solver_reference = b.solver_reference;
  std::cout << std::setprecision(4);
  for (const auto& c : report.cases) {
    std::cout << c.case_id << ": " << c.points << " points, mean " << c.mean << " s, std " << c.std << " s, min "
              << c.min << " s over " << c.samples.size() << " runs\n";
  }
  std::cout << "mean forward time " << report.mean << " s";
  if (report.solver_reference) std::cout << " (solver reference " << *report.solver_reference << " s)";
  std::cout << '\n';
  if (rc.output_dir) {
    write_text(*rc.output_dir / "timing.json", report.to_json().dump(2) + "\n");
    std::cout << "wrote " << (*rc.output_dir / "timing.json").string() << '\n';
  }
  return 0;
}

// ------------------------------------------------------------------ check

int run_check(const Common& c) {
  const auto rc = resolve(c);
  bool ok = true;
  for (const auto& line : eval::run_oracle_suite(seed_of(rc))) {
    ok = ok && line.pass();
    std::cout << (line.pass() ? "PASS " : "FAIL ") << line.name << ": " << std::setprecision(3) << line.value
              << " (limit " << line.threshold << ")" << std::endl;
  }
  std::cout << (ok ? "all checks passed\n" : "some checks failed\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed point-cloud networks for porous-media flow"};
  app.require_subcommand(1);

  GenMms gm;
  auto* gen_mms = app.add_subcommand("gen-mms", "Write manufactured-solution cases");
  add_common(gen_mms, gm.common);
  gen_mms->add_option("--cases", gm.cases, "Number of cases")->check(CLI::PositiveNumber);
  gen_mms->add_option("--interior", gm.interior, "Interior points per case");
  gen_mms->add_option("--boundary", gm.boundary, "Boundary points per case");
  gen_mms->add_option("--observations", gm.observations, "Observation points per case")->check(CLI::NonNegativeNumber);
  gen_mms->add_flag("--unseen", gm.unseen, "Write the held-out composite geometry instead of the training family");

  GenDuct gd;
  auto* gen_duct = app.add_subcommand("gen-duct", "Write parametric porous-duct cases");
  add_common(gen_duct, gd.common);
  gen_duct->add_option("--cases", gd.cases, "Number of cases")->check(CLI::PositiveNumber);
  gen_duct->add_option("--interior", gd.interior, "Interior points per case");
  gen_duct->add_option("--boundary", gd.boundary, "Boundary points per case");

  Train tr;
  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  add_common(train, tr.common);
  train->add_option("--data", tr.data, "Dataset directory (one sub-directory per case)")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--model", tr.model, "pipn or pigano")->check(CLI::IsMember({"pipn", "pigano"}));
  train->add_option("--epochs", tr.epochs, "Epochs")->check(CLI::PositiveNumber);
  train->add_flag("--no-split", tr.no_split, "Train on every case, without a validation split");
  train->add_flag("--resume", tr.resume, "Continue from <out>/last");

  Eval ev;
  auto* evalc = app.add_subcommand("eval", "Region-wise MAE tables of a model or of stored predictions");
  add_common(evalc, ev.common);
  evalc->add_option("--data", ev.data, "Dataset directory with reference fields")
      ->required()
      ->check(CLI::ExistingDirectory);
  evalc->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->check(CLI::ExistingDirectory);
  evalc->add_option("--predicted", ev.predicted, "Dataset directory whose fields are taken as the prediction")
      ->check(CLI::ExistingDirectory);
  evalc->add_option("--subset", ev.subset, "all, train, validation or test")
      ->check(CLI::IsMember({"all", "train", "validation", "test"}));

  Bench be;
  auto* bench = app.add_subcommand("bench", "Time value-only forward passes");
  add_common(bench, be.common);
  bench->add_option("--checkpoint", be.checkpoint, "Checkpoint directory (default: fresh model)")
      ->check(CLI::ExistingDirectory);
  bench->add_option("--data", be.data, "Dataset directory (default: one generated case)")
      ->check(CLI::ExistingDirectory);
  bench->add_option("--model", be.model, "pipn or pigano, for a fresh model")->check(CLI::IsMember({"pipn", "pigano"}));
  bench->add_option("--points", be.points, "Points of the generated case");
  bench->add_option("--reps", be.reps, "Timed repetitions per case (at least 5)");
  bench->add_option("--solver-reference", be.solver_reference, "External solver time to report alongside, seconds");

  Common ch;
  auto* check = app.add_subcommand("check", "Run the residual and gradient self-checks");
  add_common(check, ch, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*gen_mms) return run_gen_mms(gm);
    if (*gen_duct) return run_gen_duct(gd);
    if (*train) return run_train(tr);
    if (*evalc) return run_eval(ev);
    if (*bench) return run_bench(be);
    if (*check) return run_check(ch);
  } catch (const std::exception& e) {
    std::cerr << "pipn: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
