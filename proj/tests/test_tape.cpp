#include <catch_amalgamated.hpp>

#include <cmath>
#include <algorithm>
#include <numeric>
#include <random>
#include <tuple>
#include <vector>

#include "pipn/ad/gradcheck.hpp"
#include "pipn/ad/jet.hpp"
#include "support.hpp"

using namespace pipn::ad;
using pipn::testing::Matrix;
using pipn::testing::rel_err;

TEST_CASE("gradient of a sum of squares") {
  Tape<double> tape;
  ParameterSet<double> ps;
  ps.add("theta", (Matrix(2, 1) << 1.0, -2.0).finished());
  BoundParameters<double> bound(tape, ps);
  auto th = bound["theta"];
  auto loss = tape.sum(tape.mul(th, th));
  auto g = parameter_gradient(loss, bound);
  REQUIRE(g.size() == 1);
  CHECK(g[0](0, 0) == 2.0);
  CHECK(g[0](1, 0) == -4.0);
}

TEST_CASE("disconnected parameters get exact zeros") {
  Tape<double> tape;
  ParameterSet<double> ps;
  ps.add("used", Matrix::Constant(1, 1, 3.0));
  ps.add("unused", Matrix::Constant(2, 2, 7.0));
  BoundParameters<double> bound(tape, ps);
  auto loss = tape.sum(tape.mul(bound["used"], bound["used"]));
  auto g = parameter_gradient(loss, bound);
  REQUIRE(g.size() == 2);
  CHECK(g.at("used")(0, 0) == 6.0);
  CHECK(g.at("unused").rows() == 2);
  CHECK((g.at("unused").array() == 0.0).all());
}

TEST_CASE("non-finite losses report the offending node") {
  Tape<double> tape;
  ParameterSet<double> ps;
  ps.add("a", Matrix::Constant(1, 1, 1.0));
  BoundParameters<double> bound(tape, ps);
  auto inf = tape.constant(Matrix::Constant(1, 1, std::numeric_limits<double>::infinity()));
  auto loss = tape.add(bound["a"], inf);
  try {
    (void)parameter_gradient(loss, bound);
    FAIL("expected NumericalError");
  } catch (const pipn::NumericalError& e) {
    CHECK(e.where() == "tape node " + std::to_string(inf.index()));
  }
}

TEST_CASE("identity network: jacobian is the identity, laplacian zero") {
  Tape<double> tape;
  IdentityNet<double> net{3};
  std::vector<double> p{0.3, -1.2, 2.0};
  auto d = laplacian_and_jacobian(tape, net, std::span<const double>(p));
  CHECK(d.jacobian_matrix() == Matrix::Identity(3, 3));
  CHECK((d.laplacian.value().array() == 0.0).all());
  CHECK(d.outputs.value()(0, 1) == -1.2);
}

TEST_CASE("single tanh neuron at the origin") {
  Tape<double> tape;
  MlpShape shape{"n", 2, {1}, Activation::tanh, true};
  ParameterSet<double> ps;
  ps.add("n.0.weight", (Matrix(2, 1) << 1.0, 0.0).finished());
  ps.add("n.0.bias", Matrix::Zero(1, 1));
  BoundParameters<double> bound(tape, ps);
  Mlp<double> net(shape, bound);
  std::vector<double> p{0.0, 0.0};
  auto d = laplacian_and_jacobian(tape, net, std::span<const double>(p));
  CHECK(d.jacobian[0].item() == 1.0);
  CHECK(d.jacobian[1].item() == 0.0);
  CHECK(d.laplacian.item() == 0.0);
}

TEST_CASE("dimension mismatch is a configuration error") {
  Tape<double> tape;
  IdentityNet<double> net{2};
  std::vector<double> p{0.0, 0.0, 0.0};
  CHECK_THROWS_AS(laplacian_and_jacobian(tape, net, std::span<const double>(p)), pipn::ConfigurationError);
}

TEST_CASE("random two-layer nets agree with finite differences", "[property]") {
  for (auto act : {Activation::tanh, Activation::silu}) {
    MlpShape shape{"net", 2, {16, 3}, act, false};
    auto ps = pipn::testing::random_mlp_params(shape, 42);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    double worst1 = 0, worst2 = 0;
    for (int i = 0; i < 10; ++i) {
      Eigen::RowVectorXd x(2);
      x << u(rng), u(rng);
      Tape<double> tape;
      BoundParameters<double> bound(tape, ps);
      Mlp<double> net(shape, bound);
      std::vector<double> p{x(0), x(1)};
      auto d = laplacian_and_jacobian(tape, net, std::span<const double>(p));
      auto f = [&](const Eigen::RowVectorXd& q) { return pipn::testing::mlp_plain(shape, ps, q); };
      Eigen::RowVectorXd lap_fd = Eigen::RowVectorXd::Zero(3);
      for (int k = 0; k < 2; ++k) {
        auto fd = pipn::testing::fd_spatial(f, x, k);
        for (int j = 0; j < 3; ++j) worst1 = std::max(worst1, rel_err(d.jacobian[k].value()(0, j), fd.first(j)));
        lap_fd += fd.second;
      }
      for (int j = 0; j < 3; ++j) worst2 = std::max(worst2, rel_err(d.laplacian.value()(0, j), lap_fd(j)));
    }
    CHECK(worst1 < 1e-5);
    CHECK(worst2 < 1e-3);
  }
}

TEST_CASE("harmonic function through the identity has zero laplacian") {
  Tape<double> tape;
  IdentityNet<double> net{2};
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> p{u(rng), u(rng)};
    Matrix c(1, 2);
    c << p[0], p[1];
    auto y = net(seed_coordinates(tape, c, 1));
    // g = y0^2 - y1^2, second derivative: 2 (y_j')^2 + 2 y_j y_j''
    Var<double> lap = tape.constant_scalar(0.0);
    for (int k = 0; k < 2; ++k) {
      for (int j = 0; j < 2; ++j) {
        auto v = jet_value(y, j);
        auto g = jet_first(y, j, k);
        auto h = jet_second(y, j, k);
        auto term = tape.scale(tape.add(tape.mul(g, g), tape.mul(v, h)), j == 0 ? 2.0 : -2.0);
        lap = tape.add(lap, term);
      }
    }
    CHECK(std::abs(lap.item()) <= 1e-12);
  }
}

namespace {

// Scalar loss mixing values, spatial derivatives, max-pooling and row
// bookkeeping, so every op's reverse rule is exercised.
double mixed_loss(const ParameterSet<double>& ps, const MlpShape& shape, const Matrix& pts, int n_deriv,
                  GradientVector<double>* grad) {
  Tape<double> tape;
  BoundParameters<double> bound(tape, ps);
  Mlp<double> net(shape, bound);
  auto x = seed_coordinates(tape, pts, n_deriv);
  auto y = net(x);
  auto lap0 = jet_laplacian(y, 0);
  auto gx1 = jet_first(y, 1, 0);
  auto val = jet_value(y, 2);
  auto pooled = tape.max_pool(tape.slice(y.m, 0, y.layout.n_value, 0, 3), 0, y.layout.n_value);
  auto gathered = tape.gather_rows(y.m, {1, 0, 3});
  auto scattered = tape.scatter_rows(gathered, {2, 2, 0}, 4);
  auto rowscaled = tape.mul_row(scattered, pooled);
  Var<double> loss = tape.add(tape.mean(tape.mul(lap0, lap0)), tape.sum(tape.mul(gx1, val)));
  loss = tape.add(loss, tape.sum(tape.sqrt(tape.add_scalar(tape.mul(rowscaled, rowscaled), 1.0))));
  if (grad) *grad = parameter_gradient(loss, bound);
  return loss.item();
}

}  // namespace

TEST_CASE("parameter gradients through jets match finite differences", "[property]") {
  for (auto act : {Activation::tanh, Activation::silu}) {
    MlpShape shape{"m", 2, {6, 5, 3}, act, false};
    auto ps = pipn::testing::random_mlp_params(shape, 7);
    Matrix pts = Matrix::Random(5, 2);
    GradientVector<double> g;
    mixed_loss(ps, shape, pts, 3, &g);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (Eigen::Index e = 0; e < ps.value(i).size(); ++e) {
        auto pp = ps, pm = ps;
        pp.value(i).data()[e] += h;
        pm.value(i).data()[e] -= h;
        const double fd = (mixed_loss(pp, shape, pts, 3, nullptr) - mixed_loss(pm, shape, pts, 3, nullptr)) / (2 * h);
        worst = std::max(worst, rel_err(g[i].data()[e], fd));
      }
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("gradient is linear in the loss") {
  MlpShape shape{"m", 2, {7, 2}, Activation::tanh, false};
  auto ps = pipn::testing::random_mlp_params(shape, 3);
  Matrix pts = Matrix::Random(4, 2);
  auto grads = [&](double a, double b) {
    Tape<double> tape;
    BoundParameters<double> bound(tape, ps);
    Mlp<double> net(shape, bound);
    auto y = net(seed_coordinates(tape, pts, 4));
    auto l1 = tape.sum(tape.mul(jet_laplacian(y, 0), jet_laplacian(y, 0)));
    auto l2 = tape.sum(tape.mul(jet_first(y, 1, 1), jet_value(y, 0)));
    return parameter_gradient(tape.add(tape.scale(l1, a), tape.scale(l2, b)), bound).flat();
  };
  const double a = 0.7, b = -2.3;
  Eigen::VectorXd combined = grads(a, b);
  Eigen::VectorXd separate = a * grads(1, 0) + b * grads(0, 1);
  CHECK((combined - separate).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, combined.cwiseAbs().maxCoeff()));
}

TEST_CASE("identical inputs give bitwise identical tapes and gradients") {
  MlpShape shape{"m", 3, {9, 4}, Activation::silu, false};
  auto ps = pipn::testing::random_mlp_params(shape, 99);
  Matrix pts = Matrix::Random(6, 3);
  auto run = [&]() {
    Tape<double> tape;
    BoundParameters<double> bound(tape, ps);
    Mlp<double> net(shape, bound);
    auto y = net(seed_coordinates(tape, pts, 6));
    auto loss = tape.sum(tape.mul(y.m, y.m));
    auto g = parameter_gradient(loss, bound).flat();
    std::vector<Matrix> values;
    for (std::size_t i = 0; i < tape.size(); ++i) values.push_back(tape.value(static_cast<int>(i)));
    auto replayed = tape.replay();
    for (std::size_t i = 0; i < values.size(); ++i) REQUIRE(replayed[i] == values[i]);
    return std::make_pair(values, g);
  };
  auto [v1, g1] = run();
  auto [v2, g2] = run();
  REQUIRE(v1.size() == v2.size());
  for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);
  CHECK(g1 == g2);
}

TEST_CASE("activation derivative tables match finite differences") {
  for (auto act : {Activation::tanh, Activation::silu}) {
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
      const double h = 1e-6;
      auto p = activation_derivs(act, x + h), m = activation_derivs(act, x - h), c = activation_derivs(act, x);
      CHECK(c.s1 == Catch::Approx((p.s0 - m.s0) / (2 * h)).epsilon(1e-7).margin(1e-9));
      CHECK(c.s2 == Catch::Approx((p.s1 - m.s1) / (2 * h)).epsilon(1e-7).margin(1e-9));
      CHECK(c.s3 == Catch::Approx((p.s2 - m.s2) / (2 * h)).epsilon(1e-7).margin(1e-9));
    }
  }
}

TEST_CASE("max_pool breaks ties toward the lowest row") {
  Tape<double> tape;
  auto a = tape.variable((Matrix(3, 2) << 1.0, 5.0, 4.0, 5.0, 4.0, 2.0).finished());
  auto pooled = tape.max_pool(a, 0, 3);
  CHECK(tape.argmax(pooled) == std::vector<int>{1, 0});
  auto g = tape.gradient(tape.sum(pooled), std::vector<Var<double>>{a});
  CHECK(g[0] == (Matrix(3, 2) << 0, 1, 1, 0, 0, 0).finished());
}

TEST_CASE("fd_check on an exact quadratic and on a broken gradient") {
  auto quad = [](std::span<const double> x) {
    double v = 0;
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      v += x[i] * x[i];
      g[i] = 2 * x[i];
    }
    return std::make_pair(v, g);
  };
  CHECK(fd_check(quad, {1, 2, 3}, 1e-5) < 1e-8);
  auto doubled = [&](std::span<const double> x) {
    auto r = quad(x);
    for (auto& gi : r.second) gi *= 2;
    return r;
  };
  CHECK(fd_check(doubled, {1, 2, 3}, 1e-5) == Catch::Approx(0.5).epsilon(1e-6));
  CHECK_THROWS_AS(fd_check(quad, {1.0}, 0.0), pipn::DomainError);
}

TEST_CASE("float tapes run the same graph") {
  Tape<float> tape;
  MlpShape shape{"m", 2, {4, 2}, Activation::tanh, false};
  ParameterSet<float> ps;
  ps.add("m.0.weight", Eigen::MatrixXf::Constant(2, 4, 0.25f));
  ps.add("m.0.bias", Eigen::MatrixXf::Zero(1, 4));
  ps.add("m.1.weight", Eigen::MatrixXf::Constant(4, 2, 0.5f));
  ps.add("m.1.bias", Eigen::MatrixXf::Zero(1, 2));
  BoundParameters<float> bound(tape, ps);
  Mlp<float> net(shape, bound);
  std::vector<float> p{0.1f, 0.2f};
  auto d = laplacian_and_jacobian(tape, net, std::span<const float>(p));
  auto g = parameter_gradient(tape.sum(tape.mul(d.laplacian, d.laplacian)), bound);
  CHECK(std::isfinite(g.norm()));
  CHECK(d.jacobian[0].value()(0, 0) > 0.0f);
}

TEST_CASE("row-stable product matches Eigen and is exact under row permutation") {
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, std::tuple{7, 3, 5}, std::tuple{37, 300, 9}, std::tuple{200, 65, 130}}) {
    Matrix a = Matrix::Random(n, k), b = Matrix::Random(k, m);
    const Matrix c = row_stable_matmul(a, b);
    const Matrix ref = a * b;
    CHECK((c - ref).cwiseAbs().maxCoeff() <= 1e-13 * k);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(static_cast<std::uint64_t>(n));
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix ap(n, k);
    for (int i = 0; i < n; ++i) ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
    const Matrix cp = row_stable_matmul(ap, b);
    for (int i = 0; i < n; ++i) CHECK(cp.row(i) == c.row(perm[static_cast<std::size_t>(i)]));
  }
  Eigen::MatrixXf af = Eigen::MatrixXf::Random(9, 5), bf = Eigen::MatrixXf::Random(5, 3);
  CHECK((row_stable_matmul(af, bf) - af * bf).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("vectorized exp, expm1, tanh and logistic agree with libm and ignore position") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  std::vector<double> x(1003), y(x.size()), z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = u(rng) * (i % 3 == 0 ? 1e-4 : 1.0);
  auto worst = [&](auto vec, auto ref) {
    vec(x.data(), y.data(), x.size());
    double w = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) w = std::max(w, std::abs(y[i] - ref(x[i])) / std::abs(ref(x[i])));
    return w;
  };
  CHECK(worst(pipn::ad::vmath::exp, [](double v) { return std::exp(v); }) < 1e-15);
  CHECK(worst(pipn::ad::vmath::expm1, [](double v) { return std::expm1(v); }) < 1e-15);
  CHECK(worst(pipn::ad::vmath::tanh, [](double v) { return std::tanh(v); }) < 2e-15);
  CHECK(worst(pipn::ad::vmath::sigmoid, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }) < 2e-15);

  // Reversing the array reverses the result bit for bit (tail included).
  pipn::ad::vmath::tanh(x.data(), y.data(), x.size());
  std::vector<double> xr(x.rbegin(), x.rend());
  pipn::ad::vmath::tanh(xr.data(), z.data(), xr.size());
  std::reverse(z.begin(), z.end());
  CHECK(y == z);

  const double special[] = {std::nan(""), 0.0, 800.0, -800.0};
  double out[4];
  pipn::ad::vmath::tanh(special, out, 4);
  CHECK(std::isnan(out[0]));
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 1.0);
  CHECK(out[3] == -1.0);
  pipn::ad::vmath::sigmoid(special, out, 4);
  CHECK(std::isnan(out[0]));
  CHECK(out[1] == 0.5);
  CHECK(out[2] == 1.0);
  CHECK(out[3] < 1e-300);
}
