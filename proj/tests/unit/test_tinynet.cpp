#include <cmath>
#include <numbers>

#include "checks.hpp"
#include "doctest.h"
#include "uqbench/error.hpp"
#include "uqbench/tinynet.hpp"

using namespace uqbench;
using namespace uqbench::nn;

namespace {

// E[max(0, X)] and E[max(0, X)^2] by Simpson integration of the Gaussian density.
std::pair<double, double> relu_moments_quadrature(double mu, double var) {
  const double sd = std::sqrt(var);
  const double lo = 0.0, hi = std::max(0.0, mu) + 12 * sd;
  const int n = 20000;
  const double h = (hi - lo) / n;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    const double pdf = std::exp(-0.5 * (x - mu) * (x - mu) / var) / (sd * std::sqrt(2 * std::numbers::pi));
    m1 += w * x * pdf;
    m2 += w * x * x * pdf;
  }
  return {m1 * h / 3, m2 * h / 3};
}

}  // namespace

TEST_CASE("forward pass") {
  SUBCASE("zero weights give zero output") {
    Mlp net({2, 16, 32, 32, 2});
    const auto y = net.forward(Vector(Vector::Ones(2)));
    CHECK(y.size() == 2);
    CHECK(y.isZero());
  }
  SUBCASE("hand-computed two-layer fixture") {
    // h = relu([1 -1; 2 0.5] x + [0.5, -1]), y = [3 -2] h + 0.25
    Mlp net({2, 2, 1});
    net.layers()[0].weight << 1, -1, 2, 0.5;
    net.layers()[0].bias << 0.5, -1;
    net.layers()[1].weight << 3, -2;
    net.layers()[1].bias << 0.25;
    Vector x(2);
    x << 1, 2;
    // h = relu([-0.5, 2]) = [0, 2]; y = -4 + 0.25
    CHECK(net.forward(x)(0) == doctest::Approx(-3.75));
    x << 2, 1;
    // h = relu([1.5, 3.5]); y = 4.5 - 7 + 0.25
    CHECK(net.forward(x)(0) == doctest::Approx(-2.25));
  }
  SUBCASE("shape errors") {
    Mlp net({2, 3, 2});
    CHECK_THROWS_AS(net.forward(Vector(Vector::Ones(3))), ShapeError);
    CHECK_THROWS_AS(Mlp({2}), ShapeError);
  }
}

TEST_CASE("heteroscedastic loss values") {
  CHECK(loss_nll(1, 1, 0) == 0.0);
  CHECK(loss_nll(2, 1, 0) == doctest::Approx(0.5));
  CHECK(loss_nll(0, 0, std::log(4.0)) == doctest::Approx(0.6931).epsilon(1e-4));
  // Doubling the residual quadruples the residual term at fixed variance.
  const double s = 0.7;
  const double r1 = loss_nll(1.3, 0.0, s) - 0.5 * s, r2 = loss_nll(2.6, 0.0, s) - 0.5 * s;
  CHECK(r2 == doctest::Approx(4 * r1));
}

TEST_CASE("zero residual with zero log-variance has zero gradient") {
  Matrix out(2, 3);
  out << 1, 2, 3, 0, 0, 0;
  Matrix g;
  nll_batch(out, std::vector<double>{1, 2, 3}, &g);
  CHECK(g.row(0).isZero());
  // d/ds of 0.5 s is 0.5 / batch.
  CHECK(g(1, 0) == doctest::Approx(0.5 / 3));
}

TEST_CASE("heteroscedastic loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    const auto c = checks::check_nll_gradient(seed);
    CHECK(c.pass);
  }
}

TEST_CASE("KL loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    CHECK(checks::check_kl_gradient(seed).pass);
  }
}

TEST_CASE("softmax cross-entropy gradient") {
  rand::Stream rng({4});
  const Matrix z = checks::random_matrix(rng, 4, 3);
  Matrix y = Matrix::Zero(4, 3);
  y(0, 0) = 1;
  y(1, 1) = 0.5;
  y(2, 1) = 0.5;
  y(3, 2) = 1;
  Matrix g;
  softmax_cross_entropy(z, y, &g);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Matrix zp = z, zm = z;
    zp(i) += 1e-6;
    zm(i) -= 1e-6;
    const double fd = (softmax_cross_entropy(zp, y, nullptr) - softmax_cross_entropy(zm, y, nullptr)) / 2e-6;
    CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("ADF moment propagation") {
  SUBCASE("identity layer") {
    Mlp net({1, 1});
    net.layers()[0].weight << 1;
    const auto a = net.forward_adf(Vector::Constant(1, 2.0), Vector::Constant(1, 3.0));
    CHECK(a.mean(0) == 2.0);
    CHECK(a.variance(0) == 3.0);
  }
  SUBCASE("variance scales with the squared weight") {
    Mlp net({1, 1});
    net.layers()[0].weight << 2;
    const auto a = net.forward_adf(Vector::Constant(1, 1.0), Vector::Constant(1, 1.0));
    CHECK(a.mean(0) == 2.0);
    CHECK(a.variance(0) == 4.0);
  }
  SUBCASE("standard rectified Gaussian") {
    const auto r = rectified_gaussian(0.0, 1.0);
    CHECK(r.mean == doctest::Approx(1 / std::sqrt(2 * std::numbers::pi)));
    CHECK(r.mean == doctest::Approx(0.3989).epsilon(1e-4));
    CHECK(r.variance == doctest::Approx(0.5 - 1 / (2 * std::numbers::pi)));
  }
  SUBCASE("negative variance is rejected") {
    Mlp net({1, 1});
    CHECK_THROWS_AS(net.forward_adf(Vector::Zero(1), Vector::Constant(1, -1.0)), DomainError);
  }
}

TEST_CASE("rectified moments agree with quadrature") {
  for (const double mu : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
    for (const double var : {0.01, 0.5, 1.0, 4.0}) {
      CAPTURE(mu);
      CAPTURE(var);
      const auto r = rectified_gaussian(mu, var);
      const auto [m1, m2] = relu_moments_quadrature(mu, var);
      CHECK(r.mean == doctest::Approx(m1).epsilon(1e-7));
      CHECK(r.variance == doctest::Approx(m2 - m1 * m1).epsilon(1e-6).scale(1e-12));
      // Partial derivatives against central differences.
      const double h = 1e-6;
      const auto up = rectified_gaussian(mu + h, var), dn = rectified_gaussian(mu - h, var);
      CHECK(r.dmean_dmu == doctest::Approx((up.mean - dn.mean) / (2 * h)).epsilon(1e-5));
      CHECK(r.dvar_dmu == doctest::Approx((up.variance - dn.variance) / (2 * h)).epsilon(1e-5).scale(1e-8));
      const double hv = 1e-6 * var;
      const auto vu = rectified_gaussian(mu, var + hv), vd = rectified_gaussian(mu, var - hv);
      CHECK(r.dmean_dvar == doctest::Approx((vu.mean - vd.mean) / (2 * hv)).epsilon(1e-5).scale(1e-8));
      CHECK(r.dvar_dvar == doctest::Approx((vu.variance - vd.variance) / (2 * hv)).epsilon(1e-5).scale(1e-8));
    }
  }
}

TEST_CASE("ADF with zero input variance equals the point forward pass") {
  rand::Stream rng({8});
  for (int trial = 0; trial < 5; ++trial) {
    const auto net = checks::random_net(rng, 3, 2);
    Vector x(3);
    x << rng.normal(), rng.normal(), rng.normal();
    const auto a = net.forward_adf(x, Vector::Zero(3));
    const auto y = net.forward(x);
    CHECK(a.mean(0) == doctest::Approx(y(0)).epsilon(1e-14));
    CHECK(a.mean(1) == doctest::Approx(y(1)).epsilon(1e-14));
    CHECK(a.variance.isZero());
  }
}

TEST_CASE("ADF on affine networks matches Monte Carlo") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    const auto c = checks::check_affine_adf(seed);
    CAPTURE(c.worst_z);
    CHECK(c.pass);
  }
}

TEST_CASE("ADF mean through one rectifier layer is exact") {
  // The hidden pre-activations are exactly Gaussian, so the output mean is
  // linear in exact rectified means even though ADF ignores correlations.
  rand::Stream rng({12});
  Mlp net({2, 4, 1});
  net.init(rng);
  Vector mu(2), var(2);
  mu << 0.3, -0.2;
  var << 0.8, 1.5;
  const auto a = net.forward_adf(mu, var);
  const int n = 200000;
  Matrix x(2, n);
  for (int s = 0; s < n; ++s) {
    x(0, s) = mu(0) + std::sqrt(var(0)) * rng.normal();
    x(1, s) = mu(1) + std::sqrt(var(1)) * rng.normal();
  }
  const Matrix y = net.forward(x);
  const double m = y.mean();
  const double se = std::sqrt((y.array() - m).square().sum() / (n - 1) / n);
  CHECK(std::abs(a.mean(0) - m) < 4 * se);
}

TEST_CASE("ADF NLL gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    rand::Stream rng({seed}, "adf.grad");
    const int batch = 1 + static_cast<int>(rng.below(5));
    const auto net = checks::random_net(rng, 2, 2, 0.2);
    const Matrix mean = checks::random_matrix(rng, 2, batch);
    Matrix var = checks::random_matrix(rng, 2, batch).cwiseAbs() * 0.3;
    std::vector<double> t(static_cast<std::size_t>(batch));
    for (auto& v : t) v = rng.normal();
    const auto masks = net.sample_masks(rng, batch);
    const auto loss = [&](const Mlp& n) { return adf_nll_batch(n.forward_adf(mean, var, &masks, nullptr), t, nullptr, nullptr); };
    Mlp::AdfTape tape;
    Matrix gm, gv;
    adf_nll_batch(net.forward_adf(mean, var, &masks, &tape), t, &gm, &gv);
    const auto c = checks::compare(checks::flatten(net.backward_adf(tape, gm, gv)), checks::numeric_gradient(net, loss));
    CAPTURE(c.worst_relative);
    CHECK(c.pass);
  }
}

TEST_CASE("flatten round trip and parameter count") {
  rand::Stream rng({1});
  Mlp net({2, 16, 32, 32, 2});
  net.init(rng);
  CHECK(net.parameter_count() == 2 * 16 + 16 + 16 * 32 + 32 + 32 * 32 + 32 + 32 * 2 + 2);
  Mlp copy({2, 16, 32, 32, 2});
  copy.unflatten(net.flatten());
  CHECK(copy.flatten() == net.flatten());
  CHECK_THROWS_AS(copy.unflatten(std::vector<double>(3)), ShapeError);
}

TEST_CASE("dropout masks") {
  Mlp net({2, 50, 50, 1}, 0.1);
  rand::Stream a({3}), b({3});
  const auto ma = net.sample_masks(a, 40), mb = net.sample_masks(b, 40);
  REQUIRE(ma.size() == 2);
  CHECK(ma[0] == mb[0]);
  const double kept = (ma[0].array() > 0).cast<double>().mean();
  CHECK(kept == doctest::Approx(0.9).epsilon(0.05));
  CHECK(ma[0].maxCoeff() == doctest::Approx(1 / 0.9));
  Mlp plain({2, 5, 1});
  CHECK(plain.sample_masks(a, 3)[0].isOnes());
  CHECK_THROWS_AS(Mlp({2, 1}, 1.0), ParameterError);
}

namespace {

TrainStats fit_linear(Mlp& net, const TrainConfig& cfg, rand::Seed seed) {
  // Fit y = 3x - 1 with the two-output head ignored except output 0.
  const int n = 256;
  Matrix x(1, n);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) {
    x(0, i) = -1 + 2.0 * i / (n - 1);
    y[static_cast<std::size_t>(i)] = 3 * x(0, i) - 1;
  }
  return fit(net, n, cfg, seed, [&](const Mlp& m, std::span<const std::size_t> batch, const DropoutMasks& masks, Gradients& grad) {
    Matrix xb(1, static_cast<Eigen::Index>(batch.size()));
    std::vector<double> yb;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      xb(0, static_cast<Eigen::Index>(j)) = x(0, static_cast<Eigen::Index>(batch[j]));
      yb.push_back(y[batch[j]]);
    }
    Mlp::Tape tape;
    const Matrix out = m.forward(xb, &masks, &tape);
    Matrix g = Matrix::Zero(out.rows(), out.cols());
    double loss = 0.0;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double r = out(0, j) - yb[static_cast<std::size_t>(j)];
      loss += r * r;
      g(0, j) = 2 * r / out.cols();
    }
    grad = m.backward(tape, g);
    return loss / out.cols();
  });
}

}  // namespace

TEST_CASE("training") {
  rand::Stream rng({5});
  Mlp net({1, 8, 2}, 0.1);
  net.init(rng);
  SUBCASE("zero epochs leave the model unchanged") {
    const auto before = net.flatten();
    fit_linear(net, {0, 32, {}, 1.0}, {1});
    CHECK(net.flatten() == before);
  }
  SUBCASE("loss decreases and training is deterministic") {
    Mlp other = net;
    const auto s1 = fit_linear(net, {30, 32, {OptimizerConfig::Kind::adam, 1e-2}, 1.0}, {1});
    const auto s2 = fit_linear(other, {30, 32, {OptimizerConfig::Kind::adam, 1e-2}, 1.0}, {1});
    CHECK(s1.epoch_loss.back() < 0.2 * s1.epoch_loss.front());
    CHECK(net.flatten() == other.flatten());
    CHECK(s1.steps == 30 * 8);
  }
  SUBCASE("momentum SGD also converges on an easy problem") {
    const auto s = fit_linear(net, {30, 32, {OptimizerConfig::Kind::sgd_momentum, 1e-2}, 1.0}, {1});
    CHECK(s.epoch_loss.back() < s.epoch_loss.front());
  }
  SUBCASE("divergence raises a training error") {
    CHECK_THROWS_AS(fit_linear(net, {50, 32, {OptimizerConfig::Kind::sgd_momentum, 1e6}, 1.0}, {1}), TrainingError);
  }
}
