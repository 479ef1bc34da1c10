#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "pipn/dataset/generators.hpp"
#include "pipn/dataset/ingest.hpp"
#include "pipn/training/train.hpp"

using namespace pipn;
using namespace pipn::training;
using models::ModelParameters;
using models::PipnConfig;

namespace {

PipnConfig small_pipn() {
  PipnConfig c;
  c.local_widths = {16, 16};
  c.global_widths = {16, 32};
  c.decoder_widths = {32, 16};
  c.activation = ad::Activation::tanh;
  return c;
}

// 131 parameters.
PipnConfig tiny_pipn() {
  PipnConfig c;
  c.local_widths = {3};
  c.global_widths = {6};
  c.decoder_widths = {5, 3};
  c.activation = ad::Activation::tanh;
  return c;
}

dataset::MmsOptions small_mms(int interior, int boundary) {
  dataset::MmsOptions o;
  o.interior = interior;
  o.boundary = boundary;
  return o;
}

PointCloudCase mms_case(int interior, int boundary, std::uint64_t seed) {
  auto spec = dataset::mms_shape_family()[1];
  spec.scale = 0.8;
  return dataset::make_mms_case(spec, "t" + std::to_string(seed), seed, small_mms(interior, boundary));
}

// Exact manufactured fields as a normalized output jet in cloud order.
ad::Jet<double> exact_jet(ad::Tape<double>& tape, const PreparedCase& pc, const dataset::NormalizationStats& st) {
  const int n = pc.cloud.input.size();
  const int nf = pc.n_colloc();
  ad::JetLayout layout{n, nf, 2};
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(layout.rows(), 3);
  for (int j = 0; j < n; ++j) {
    const int i = pc.cloud.order[static_cast<std::size_t>(j)];
    const double x = pc.physical.coords(i, 0), y = pc.physical.coords(i, 1);
    const auto f = physics::mms_flow_jet(x, y, pc.fluid.rho);
    const double su[2] = {st.velocity[0].std, st.velocity[1].std};
    const double sx[2] = {st.coords[0].std, st.coords[1].std};
    for (int c = 0; c < 2; ++c) m(j, c) = st.velocity[static_cast<std::size_t>(c)].forward(f.u[static_cast<std::size_t>(c)]);
    m(j, 2) = st.pressure.forward(f.p);
    if (j >= nf) continue;
    for (int k = 0; k < 2; ++k) {
      for (int c = 0; c < 2; ++c) {
        m(layout.grad_row(k) + j, c) = sx[k] / su[c] * f.du[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
        m(layout.hess_row(k) + j, c) =
            sx[k] * sx[k] / su[c] * f.d2u[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
      }
      m(layout.grad_row(k) + j, 2) = sx[k] / st.pressure.std * f.dp[static_cast<std::size_t>(k)];
    }
  }
  return {tape.constant(m), layout};
}

LossBreakdown model_loss(const ModelParameters& model, const PreparedCase& pc, const dataset::NormalizationStats& st,
                         const LossWeights& w) {
  return batch_loss(model, {&pc}, st, w, {}, false).first;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("pipn_test_training_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("exact manufactured fields annihilate every loss term") {
  auto c = mms_case(200, 60, 3);
  dataset::select_observations(c, 25, 4);
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  const auto pc = prepare_case(c, st);
  ad::Tape<double> tape;
  const auto y = exact_jet(tape, pc, st);
  const auto v = compute_loss(y, pc, st, {1, 1, 1, 1}).values({1, 1, 1, 1});
  CHECK(v.l_b == 0.0);
  CHECK(v.l_d == 0.0);
  CHECK(v.l_m < 1e-10);
  CHECK(v.l_c < 1e-10);
  CHECK(std::abs(v.total - (v.l_m + v.l_c)) < 1e-12);
}

TEST_CASE("rest state with zero targets and no forcing has zero loss") {
  auto cases = dataset::make_duct_cases(1, 5, [] {
    dataset::DuctOptions o;
    o.interior = 100;
    o.boundary = 40;
    return o;
  }());
  auto c = cases.front();
  const auto st = dataset::compute_normalization(cases);
  c.meta.inlet_speed = 0.0;
  const auto pc = prepare_case(c, st);
  ad::Tape<double> tape;
  ad::JetLayout layout{c.size(), pc.n_colloc(), 2};
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(layout.rows(), 3);
  for (int j = 0; j < c.size(); ++j) {
    m(j, 0) = st.velocity[0].forward(0.0);
    m(j, 1) = st.velocity[1].forward(0.0);
    m(j, 2) = st.pressure.forward(0.0);
  }
  const auto v = compute_loss(ad::Jet<double>{tape.constant(m), layout}, pc, st, {1, 1, 1, 0}).values({1, 1, 1, 0});
  CHECK(v.total == 0.0);
}

TEST_CASE("total is the weighted sum of the terms") {
  CHECK(make_breakdown({1, 1, 1, 0}, 2, 3, 5, 7).total == 10.0);
  CHECK(make_breakdown({0.5, 2, 0, 1}, 2, 3, 5, 7).total == 14.0);
  CHECK_THROWS_AS(LossWeights({0, 0, 0, 0}).validate(), ConfigurationError);
  CHECK_THROWS_AS(LossWeights({1, -1, 0, 0}).validate(), ConfigurationError);
}

TEST_CASE("data weight without observations is a configuration error") {
  const auto c = mms_case(50, 30, 1);
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  const auto pc = prepare_case(c, st);
  const auto model = models::init_parameters(tiny_pipn(), 1);
  CHECK_THROWS_AS(model_loss(model, pc, st, {1, 1, 1, 1}), ConfigurationError);
}

TEST_CASE("boundary targets without reference fields are masked per boundary type") {
  auto c = dataset::make_duct_cases(1, 9, [] {
             dataset::DuctOptions o;
             o.interior = 50;
             o.boundary = 40;
             return o;
           }())
               .front();
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  const auto pc = prepare_case(c, st);
  REQUIRE(pc.boundary_rows.size() == static_cast<std::size_t>(c.size() - pc.n_colloc()));
  const double ux = c.meta.inlet_speed * std::cos(c.meta.inlet_angle);
  for (std::size_t b = 0; b < pc.boundary_rows.size(); ++b) {
    const int i = pc.cloud.order[static_cast<std::size_t>(pc.boundary_rows[b])];
    const auto mask = pc.boundary_mask.row(static_cast<Eigen::Index>(b));
    const auto tgt = pc.boundary_target.row(static_cast<Eigen::Index>(b));
    if (c.has_tag(i, BoundaryTag::inlet)) {
      CHECK(mask == Eigen::RowVector3d(1, 1, 0));
      CHECK(tgt(0) == st.velocity[0].forward(ux));
    } else if (c.has_tag(i, BoundaryTag::outlet)) {
      CHECK(mask == Eigen::RowVector3d(0, 0, 1));
      CHECK(tgt(2) == st.pressure.forward(0.0));
    } else {
      REQUIRE(c.has_tag(i, BoundaryTag::wall));
      CHECK(mask == Eigen::RowVector3d(1, 1, 0));
    }
  }
  // Interface points are collocation points.
  for (int j = 0; j < pc.n_colloc(); ++j) {
    const int i = pc.cloud.order[static_cast<std::size_t>(j)];
    CHECK((!c.is_boundary(i) || c.has_tag(i, BoundaryTag::interface)));
  }
}

TEST_CASE("porous gating: zero coefficients match the fluid equations") {
  const auto c = mms_case(150, 50, 6);
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  auto base = prepare_case(c, st);
  base.forcing.resize(0, 0);
  const auto model = models::init_parameters(small_pipn(), 3);
  const LossWeights w{1, 1, 1, 0};

  auto porous_zero = base;
  porous_zero.chi.setOnes();
  porous_zero.D.setZero();
  porous_zero.F.setZero();
  auto fluid = base;
  fluid.chi.setZero();
  const double a = model_loss(model, porous_zero, st, w).l_m;
  const double b = model_loss(model, fluid, st, w).l_m;
  CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)));

  auto fluid_other = fluid;
  fluid_other.D.setConstant(1e4);
  fluid_other.F.setConstant(30.0);
  CHECK(model_loss(model, fluid_other, st, w).l_m == b);

  // Porous points do respond to the coefficients.
  auto porous = base;
  porous.chi.setOnes();
  porous.D.setConstant(100.0);
  CHECK(model_loss(model, porous, st, w).l_m != a);
}

TEST_CASE("full-loss parameter gradient matches finite differences on a tiny model") {
  const auto model = models::init_parameters(tiny_pipn(), 12);
  REQUIRE(model.values.count() <= 200);
  auto c = mms_case(10, 6, 2);
  REQUIRE(c.size() == 16);
  dataset::select_observations(c, 5, 3);
  const auto st = dataset::compute_normalization(std::vector<PointCloudCase>{c});
  const auto pc = prepare_case(c, st);
  const LossWeights w{1, 1, 1, 1};
  const auto grad = batch_loss(model, {&pc}, st, w, {}, true).second;
  REQUIRE(grad.size() == model.values.size());

  auto value_at = [&](std::size_t p, Eigen::Index e, double delta) {
    auto m = model;
    m.values.value(p).data()[e] += delta;
    return model_loss(m, pc, st, w).total;
  };
  double worst = 0.0;
  int checked = 0;
  for (std::size_t p = 0; p < model.values.size(); ++p) {
    for (Eigen::Index e = 0; e < model.values.value(p).size(); ++e) {
      // Fourth-order central difference; the step stays small enough not to
      // cross a change of the pooling argmax.
      const double h = 1e-4;
      const double fd = (-value_at(p, e, 2 * h) + 8 * value_at(p, e, h) - 8 * value_at(p, e, -h) +
                         value_at(p, e, -2 * h)) /
                        (12 * h);
      const double an = grad[p].data()[e];
      // Entries that lose the max-pool have an exact zero gradient; their
      // difference quotient is roundoff of order eps * |L| / h.
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
      ++checked;
    }
  }
  CHECK(checked == model.values.count());
  CHECK(worst < 1e-4);
}

TEST_CASE("adam: stationary point, first step and a scalar reference trace") {
  ad::ParameterSet<double> p;
  p.add("w", Eigen::MatrixXd::Constant(1, 1, 0.5));
  auto state = models::zero_optimizer_state(p);
  auto grads = [](double g) {
    return ad::GradientVector<double>({"w"}, {Eigen::MatrixXd::Constant(1, 1, g)});
  };

  adam_step(p, grads(0.0), state, 1e-3);
  CHECK(p.value(0)(0, 0) == 0.5);
  CHECK(state.step == 1);

  ad::ParameterSet<double> q;
  q.add("w", Eigen::MatrixXd::Constant(1, 1, 0.5));
  auto s2 = models::zero_optimizer_state(q);
  adam_step(q, grads(1.0), s2, 1e-3);
  CHECK(std::abs((0.5 - q.value(0)(0, 0)) - 1e-3) < 1e-10);

  // Independent scalar trace with a gradient sequence.
  ad::ParameterSet<double> r;
  r.add("w", Eigen::MatrixXd::Constant(1, 1, 0.5));
  auto s3 = models::zero_optimizer_state(r);
  const double gs[] = {0.3, 0.3, -1.2, 4.0, 0.01};
  double x = 0.5, m = 0.0, v = 0.0;
  double prev = 0.5;
  for (int t = 1; t <= 5; ++t) {
    const double g = gs[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 1e-3 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_step(r, grads(g), s3, 1e-3);
    CHECK(std::abs(r.value(0)(0, 0) - x) < 1e-12);
    if (t == 2) {
      const double step = prev - r.value(0)(0, 0);
      CHECK(step > 0.0);
      CHECK(step <= 1e-3);
    }
    prev = r.value(0)(0, 0);
  }
}

TEST_CASE("adam rejects non-finite gradients and names the parameter") {
  ad::ParameterSet<double> p;
  p.add("a", Eigen::MatrixXd::Zero(1, 2));
  p.add("decoder.1.bias", Eigen::MatrixXd::Zero(1, 2));
  auto state = models::zero_optimizer_state(p);
  Eigen::MatrixXd bad(1, 2);
  bad << 1.0, std::nan("");
  const ad::GradientVector<double> g({"a", "decoder.1.bias"}, {Eigen::MatrixXd::Ones(1, 2), bad});
  try {
    adam_step(p, g, state, 1e-3);
    FAIL("no exception");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("decoder.1.bias") != std::string::npos);
  }
  CHECK(state.step == 0);
  CHECK(p.value(0)(0, 0) == 0.0);
}

TEST_CASE("learning-rate schedule") {
  CHECK(lr_at(0, 1e-3, 0.9995) == 1e-3);
  CHECK(std::abs(lr_at(1000, 1e-3, 0.9995) - 6.065e-4) < 5e-8);
  CHECK(lr_at(2999, 2e-3, 1.0) == 2e-3);
  CHECK_THROWS_AS(lr_at(-1, 1e-3, 0.9), DomainError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = c;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = c;
  bad.alpha = 1.01;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = c;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = c;
  bad.checkpoint_every = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
}

TEST_CASE("50-epoch smoke run lowers the loss and keeps the decomposition identity") {
  const auto c = mms_case(667, 168, 21);
  const std::vector<PointCloudCase> cases{c};
  const auto st = dataset::compute_normalization(cases);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 5;
  const auto r = train(models::init_parameters(small_pipn(), 5), cases, {}, st, cfg);
  REQUIRE(r.history.size() == 50);
  CHECK(r.history.back().train.total < r.history.front().train.total);
  for (const auto& h : r.history) {
    const auto& b = h.train;
    CHECK(std::abs(b.total - (b.l_m + b.l_c + b.l_b + b.l_d * 0.0)) < 1e-12);
    CHECK(h.lr == lr_at(h.epoch - 1, cfg.lr, cfg.alpha));
  }
}

TEST_CASE("training is deterministic and resumes bitwise") {
  const auto cases = dataset::make_mms_cases(2, 8, small_mms(80, 40));
  const auto st = dataset::compute_normalization(cases);
  const auto init = models::init_parameters(small_pipn(), 2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 11;
  cfg.dropout = 0.05;
  const auto a = train(init, cases, {}, st, cfg);
  const auto b = train(init, cases, {}, st, cfg);
  CHECK(a.final_model.values == b.final_model.values);
  CHECK(history_to_json(a.history) == history_to_json(b.history));

  const auto dir = fresh_dir("resume");
  auto first = cfg;
  first.epochs = 10;
  first.checkpoint_every = 5;
  first.checkpoint_dir = dir;
  train(init, cases, {}, st, first);
  const auto ck = models::load_checkpoint(dir / "last");
  REQUIRE(ck.epoch == 10);
  auto rest = cfg;
  rest.checkpoint_dir = dir;
  const auto resumed = train(init, cases, {}, st, rest, ck);
  CHECK(resumed.final_model.values == a.final_model.values);
  CHECK(resumed.optimizer == a.optimizer);
  CHECK(history_to_json(resumed.history) == history_to_json(a.history));
  std::filesystem::remove_all(dir);
}

TEST_CASE("dropout acts during training only") {
  const auto cases = dataset::make_mms_cases(1, 3, small_mms(60, 30));
  const auto st = dataset::compute_normalization(cases);
  const auto init = models::init_parameters(small_pipn(), 4);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 1;
  const auto plain = train(init, cases, {}, st, cfg);
  cfg.dropout = 0.05;
  const auto dropped = train(init, cases, {}, st, cfg);
  CHECK(!(plain.final_model.values == dropped.final_model.values));

  // Evaluation mode ignores the configured probability.
  auto model = init;
  model.pipn.dropout = 0.05;
  const auto pc = prepare_cases(model, cases, st, 0);
  const auto e1 = evaluate_loss(model, pc, st, {});
  model.pipn.dropout = 0.0;
  CHECK(evaluate_loss(model, pc, st, {}) == e1);
  model.pipn.dropout = 0.05;
  const auto t1 = batch_loss(model, {&pc[0]}, st, {}, {true, 9}, false).first;
  CHECK(t1.total != e1.total);
}

TEST_CASE("validation selects the best epoch and checkpoints it") {
  const auto cases = dataset::make_mms_cases(3, 4, small_mms(80, 40));
  const std::vector<PointCloudCase> tr{cases[0], cases[1]}, va{cases[2]};
  const auto st = dataset::compute_normalization(tr);
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.validate_every = 3;
  cfg.checkpoint_every = 6;
  cfg.checkpoint_dir = fresh_dir("best");
  const auto r = train(models::init_parameters(small_pipn(), 6), tr, va, st, cfg);
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int validated = 0;
  for (const auto& h : r.history) {
    if (!h.validation) continue;
    ++validated;
    CHECK(h.epoch % 3 == 0);
    if (h.validation->total < best) {
      best = h.validation->total;
      best_epoch = h.epoch;
    }
  }
  CHECK(validated == 4);
  CHECK(r.best_epoch == best_epoch);
  const auto ck = models::load_checkpoint(cfg.checkpoint_dir / "best");
  CHECK(ck.epoch == best_epoch);
  CHECK(ck.model.values == r.best_model.values);
  CHECK(models::load_checkpoint(cfg.checkpoint_dir / "last").model.values == r.final_model.values);
  const auto pc = prepare_cases(r.best_model, va, st, 0);
  CHECK(evaluate_loss(r.best_model, pc, st, cfg.weights).total == best);
  std::filesystem::remove_all(cfg.checkpoint_dir);
}

TEST_CASE("non-finite loss aborts with the epoch and minibatch") {
  const auto cases = dataset::make_mms_cases(1, 3, small_mms(40, 20));
  const auto st = dataset::compute_normalization(cases);
  auto init = models::init_parameters(tiny_pipn(), 4);
  init.values.value(0)(0, 0) = std::nan("");
  TrainConfig cfg;
  cfg.epochs = 2;
  try {
    train(init, cases, {}, st, cfg);
    FAIL("no exception");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 1 minibatch 0") != std::string::npos);
  }
}

TEST_CASE("operator model trains on minibatches of cases") {
  models::PiganoConfig pg;
  pg.geometry_widths = {8, 8};
  pg.geometry_latent = 8;
  pg.branch_widths = {8};
  pg.branch_latent = 8;
  pg.branch_points = 12;
  pg.trunk_widths = {8, 8};
  pg.output_widths = {8};
  pg.activation = ad::Activation::tanh;
  const auto cases = dataset::make_mms_cases(3, 2, small_mms(60, 40));
  const auto st = dataset::compute_normalization(cases);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  const auto init = models::init_parameters(pg, 3);
  const auto r = train(init, cases, {}, st, cfg);
  CHECK(r.history.back().train.total < r.history.front().train.total);
  CHECK(r.optimizer.step == 15 * 2);
  const auto again = train(init, cases, {}, st, cfg);
  CHECK(again.final_model.values == r.final_model.values);
}

TEST_CASE("history table has one row per epoch") {
  std::vector<EpochRecord> h{{1, 1e-3, {1, 2, 3, 0, 6}, std::nullopt}, {2, 9e-4, {1, 1, 1, 0, 3}, LossBreakdown{1, 1, 1, 0, 3}}};
  const auto path = std::filesystem::temp_directory_path() / "pipn_history_test.csv";
  write_history(h, path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].rfind("epoch,lr,l_m,l_c,l_b,l_d,total", 0) == 0);
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(history_from_json(history_to_json(h)).size() == 2);
  std::filesystem::remove(path);
}
