#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pipn/dataset/generators.hpp"
#include "pipn/eval/metrics.hpp"
#include "pipn/eval/timing.hpp"

using namespace pipn;
using namespace pipn::eval;

namespace {

FlowField random_field(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FlowField f;
  f.u.resize(n, 2);
  f.p.resize(n);
  for (Eigen::Index i = 0; i < f.u.size(); ++i) f.u.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < n; ++i) f.p(i) = g(rng);
  return f;
}

RegionMasks split_masks(int n, int porous) {
  RegionMasks m;
  m.names = {"porous", "fluid"};
  std::vector<char> a(static_cast<std::size_t>(n), 0), b(static_cast<std::size_t>(n), 1);
  for (int i = 0; i < porous; ++i) {
    a[static_cast<std::size_t>(i)] = 1;
    b[static_cast<std::size_t>(i)] = 0;
  }
  m.masks = {a, b};
  return m;
}

RegionMaeTable table_with(double ux, double p) {
  RegionMaeTable t;
  t.fields = {"u_x", "u_y", "p"};
  t.regions = {"global", "porous", "fluid"};
  t.mae = Eigen::MatrixXd::Constant(3, 3, ux);
  t.mae.row(2).setConstant(p);
  t.present = {1, 1, 1};
  t.counts = {10, 4, 6};
  return t;
}

models::PipnConfig small_pipn() {
  models::PipnConfig c;
  c.local_widths = {16, 16};
  c.global_widths = {16, 32};
  c.decoder_widths = {32, 16};
  c.activation = ad::Activation::tanh;
  return c;
}

}  // namespace

TEST_CASE("identical fields give an all-zero table") {
  const auto f = random_field(50, 1);
  const auto t = mae_by_region(f, f, split_masks(50, 20));
  CHECK(t.regions == std::vector<std::string>{"global", "porous", "fluid"});
  CHECK(t.fields == std::vector<std::string>{"u_x", "u_y", "p"});
  CHECK(t.mae.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("uniform offset on one component shows in every region") {
  auto ref = random_field(40, 2);
  auto pred = ref;
  pred.u.col(0).array() += 0.1;
  const auto t = mae_by_region(pred, ref, split_masks(40, 15));
  for (const char* r : {"global", "porous", "fluid"}) {
    CHECK(std::abs(t.at("u_x", r) - 0.1) < 1e-12);
    CHECK(t.at("u_y", r) == 0.0);
    CHECK(t.at("p", r) == 0.0);
  }
}

TEST_CASE("region MAE matches a direct per-point average") {
  const auto ref = random_field(100, 3), pred = random_field(100, 4);
  std::mt19937_64 rng(5);
  RegionMasks m;
  m.names = {"porous", "fluid"};
  std::vector<char> a(100), b(100);
  for (int i = 0; i < 100; ++i) {
    a[static_cast<std::size_t>(i)] = static_cast<char>(rng() % 3 == 0);
    b[static_cast<std::size_t>(i)] = !a[static_cast<std::size_t>(i)];
  }
  m.masks = {a, b};
  const auto t = mae_by_region(pred, ref, m);
  for (int region = 0; region < 3; ++region) {
    double s[3] = {0, 0, 0};
    int k = 0;
    for (int i = 0; i < 100; ++i) {
      if (region > 0 && !m.masks[static_cast<std::size_t>(region - 1)][static_cast<std::size_t>(i)]) continue;
      s[0] += std::abs(pred.u(i, 0) - ref.u(i, 0));
      s[1] += std::abs(pred.u(i, 1) - ref.u(i, 1));
      s[2] += std::abs(pred.p(i) - ref.p(i));
      ++k;
    }
    for (int f = 0; f < 3; ++f) CHECK(std::abs(t.mae(f, region) - s[f] / k) < 1e-12);
  }
  // Global lies between the region values.
  for (int f = 0; f < 3; ++f) {
    CHECK(t.mae(f, 0) >= std::min(t.mae(f, 1), t.mae(f, 2)));
    CHECK(t.mae(f, 0) <= std::max(t.mae(f, 1), t.mae(f, 2)));
  }
}

TEST_CASE("empty regions are flagged absent") {
  const auto ref = random_field(30, 6), pred = random_field(30, 7);
  const auto t = mae_by_region(pred, ref, split_masks(30, 0));
  CHECK(!t.is_present("porous"));
  CHECK(t.is_present("fluid"));
  CHECK_THROWS_AS(t.at("u_x", "porous"), ConfigurationError);
  CHECK(to_text(t).find("absent") != std::string::npos);
  const auto back = table_from_csv(to_csv(t));
  CHECK(!back.is_present("porous"));
  CHECK(back.at("p", "fluid") == t.at("p", "fluid"));
}

TEST_CASE("shape mismatches are rejected") {
  const auto a = random_field(10, 1), b = random_field(11, 2);
  CHECK_THROWS_AS(mae_by_region(a, b, split_masks(11, 2)), ConfigurationError);
  CHECK_THROWS_AS(mae_by_region(a, a, split_masks(9, 2)), ConfigurationError);
}

TEST_CASE("solid-surface region comes from the named boundary tag") {
  dataset::DuctOptions o;
  o.interior = 60;
  o.boundary = 40;
  auto c = dataset::make_duct_cases(1, 2, o).front();
  c.meta.solid_surface_tag = "wall";
  const auto m = region_masks(c);
  REQUIRE(m.names.size() == 3);
  CHECK(m.names[2] == "solid_surface");
  int k = 0;
  for (char x : m.masks[2]) k += x;
  CHECK(k == c.count_tag(BoundaryTag::wall));
}

TEST_CASE("csv round trip keeps full precision") {
  const auto ref = random_field(25, 8), pred = random_field(25, 9);
  const auto t = mae_by_region(pred, ref, split_masks(25, 10));
  const auto back = table_from_csv(to_csv(t));
  CHECK(back.fields == t.fields);
  CHECK(back.regions == t.regions);
  CHECK(back.mae == t.mae);
  CHECK_THROWS_AS(table_from_csv("nope\n"), FormatError);
}

TEST_CASE("grouping by Darcy coefficient") {
  const auto single = group_errors_by_coefficient({table_with(0.01, 0.5)}, {1000.0});
  REQUIRE(single.tables.size() == 1);
  CHECK(single.tables[0].mae == table_with(0.01, 0.5).mae);

  const auto pair = group_errors_by_coefficient({table_with(0.01, 0.1), table_with(0.03, 0.2)}, {1000.0, 1000.0});
  REQUIRE(pair.tables.size() == 1);
  CHECK(std::abs(pair.tables[0].at("u_x", "global") - 0.02) < 1e-15);
  CHECK(pair.case_counts[0] == 2);

  const auto four = group_errors_by_coefficient(
      {table_with(1, 1), table_with(2, 2), table_with(3, 3), table_with(4, 4), table_with(5, 5)},
      {16000.0, 1000.0, 14000.0, 2000.0, 1000.0});
  CHECK(four.d_values == std::vector<double>{1000.0, 2000.0, 14000.0, 16000.0});
  const auto csv = grouped_to_csv(four);
  CHECK(csv.substr(0, csv.find('\n')) == "field,D=1000,D=2000,D=14000,D=16000");
  CHECK(four.tables[0].at("u_x", "global") == 3.5);
  CHECK(grouped_to_text(four).find("D=16000") != std::string::npos);
  CHECK_THROWS_AS(group_errors_by_coefficient({table_with(1, 1)}, {}), ConfigurationError);
}

TEST_CASE("grouping then averaging equals pooling per-point errors for equal group sizes") {
  std::vector<RegionMaeTable> tables;
  std::vector<double> ds;
  std::vector<FlowField> refs, preds;
  for (int k = 0; k < 6; ++k) {
    refs.push_back(random_field(40, 100 + k));
    preds.push_back(random_field(40, 200 + k));
    tables.push_back(mae_by_region(preds.back(), refs.back(), split_masks(40, 12)));
    ds.push_back(k % 2 == 0 ? 1000.0 : 5000.0);
  }
  const auto g = group_errors_by_coefficient(tables, ds);
  for (std::size_t gi = 0; gi < 2; ++gi) {
    double direct = 0.0;
    int n = 0;
    for (int k = static_cast<int>(gi); k < 6; k += 2) {
      direct += (preds[static_cast<std::size_t>(k)].p - refs[static_cast<std::size_t>(k)].p).cwiseAbs().sum();
      n += 40;
    }
    CHECK(std::abs(g.tables[gi].at("p", "global") - direct / n) < 1e-12);
  }
  std::vector<RegionMaeTable> group0{tables[0], tables[2], tables[4]};
  CHECK((pool_tables(group0).mae - g.tables[0].mae).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("prediction is returned in physical units and case order") {
  const auto cases = dataset::make_mms_cases(1, 4, [] {
    dataset::MmsOptions o;
    o.interior = 80;
    o.boundary = 40;
    return o;
  }());
  const auto& c = cases.front();
  const auto st = dataset::compute_normalization(cases);
  const auto model = models::init_parameters(small_pipn(), 1);
  const auto pred = predict_case(model, c, st);
  REQUIRE(pred.u.rows() == c.size());
  const auto cloud = models::make_cloud(dataset::normalize_case(c, st), false);
  const auto y = models::pipn_predict(model, cloud.input);
  for (std::size_t j = 0; j < cloud.order.size(); ++j) {
    const int i = cloud.order[j];
    CHECK(pred.u(i, 0) == st.velocity[0].inverse(y(static_cast<Eigen::Index>(j), 0)));
    CHECK(pred.p(i) == st.pressure.inverse(y(static_cast<Eigen::Index>(j), 2)));
  }
  const auto t = evaluate_case(pred, c);
  CHECK(t.is_present("porous"));
  CHECK(t.at("u_x", "global") > 0.0);
}

TEST_CASE("benchmark statistics and report round trip") {
  const auto cases = dataset::make_mms_cases(2, 4, [] {
    dataset::MmsOptions o;
    o.interior = 100;
    o.boundary = 40;
    return o;
  }());
  const auto st = dataset::compute_normalization(cases);
  const auto model = models::init_parameters(small_pipn(), 2);
  auto r = benchmark_inference(model, cases, st, 5);
  REQUIRE(r.cases.size() == 2);
  for (const auto& c : r.cases) {
    CHECK(c.samples.size() == 5);
    for (double s : c.samples) CHECK(s > 0.0);
    CHECK(c.mean >= c.min);
    CHECK(c.mean <= c.max);
    CHECK(c.points == 140);
  }
  CHECK(r.mean > 0.0);
  r.solver_reference = 1.17;
  CHECK(TimingReport::from_json(nlohmann::json::parse(r.to_json().dump())) == r);
  CHECK_THROWS_AS(benchmark_inference(model, cases, st, 4), ConfigurationError);
  CHECK_THROWS_AS(TimingReport::from_json(nlohmann::json{{"schema", "x"}}), FormatError);
}

TEST_CASE("doubling the point count does not reduce the mean time") {
  dataset::MmsOptions o;
  o.interior = 300;
  o.boundary = 100;
  const auto small = dataset::make_mms_cases(1, 6, o);
  o.interior = 600;
  o.boundary = 200;
  const auto large = dataset::make_mms_cases(1, 6, o);
  const auto st = dataset::compute_normalization(small);
  const auto model = models::init_parameters(models::PipnConfig{}, 3);
  const auto a = benchmark_inference(model, small, st, 10);
  const auto b = benchmark_inference(model, large, st, 10);
  CHECK(b.mean >= a.mean);
}
