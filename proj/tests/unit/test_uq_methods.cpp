#include <cmath>

#include "doctest.h"
#include "uqbench/error.hpp"
#include "uqbench/uq_methods.hpp"

using namespace uqbench;
using namespace uqbench::uq;

namespace {

// Identity standardizer and a single affine layer: outputs are
// b = w00 d + w01 h + b0 and log-variance s = w10 d + w11 h + b1.
regression::RegressionModel affine_model(regression::Method method, double alpha) {
  regression::RegressionModel m;
  m.config.method = method;
  m.config.hidden = {};
  m.config.dropout_rate = 0.0;
  m.net = nn::Mlp({2, 2});
  m.net.layers()[0].weight << 2.0, -1.5, 0.01, 0.02;
  m.net.layers()[0].bias << 3.0, -1.0;
  m.alpha = alpha;
  return m;
}

}  // namespace

TEST_CASE("combining passes") {
  SUBCASE("constant variance") {
    const std::vector<PassOutput> p(4, {2.0, 9.0});
    const auto r = combine_passes(p);
    CHECK(r.sigma_a == doctest::Approx(3.0));
    CHECK(r.sigma_e == 0.0);
    CHECK(r.t_samples == 4);
  }
  SUBCASE("two equally likely means") {
    const std::vector<PassOutput> p{{1, 0}, {3, 0}, {1, 0}, {3, 0}};
    const auto r = combine_passes(p);
    CHECK(r.b_hat == 2.0);
    CHECK(r.sigma_e * r.sigma_e == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(combine_passes(std::vector<PassOutput>{{1, 1}}), ParameterError);
}

TEST_CASE("MC dropout without dropout is deterministic") {
  const auto m = affine_model(regression::Method::heteroscedastic, 0.1);
  const auto r = predict_mc_dropout(m, 1.0, 2.0, 10, {1});
  const auto p = regression::predict_point(m, 1.0, 2.0);
  CHECK(r.sigma_e == 0.0);
  CHECK(r.b_hat == doctest::Approx(p.b_hat));
  CHECK(r.sigma_a == doctest::Approx(p.sigma));
  CHECK_THROWS_AS(predict_mc_dropout(m, 1, 2, 1, {1}), ParameterError);
}

TEST_CASE("ADF prediction") {
  const auto m = affine_model(regression::Method::adf, 0.1);
  SUBCASE("zero input variance leaves only the head") {
    const auto r = predict_adf(m, 1.0, 2.0, 0.0, 0.0, 5, {1});
    CHECK(r.sigma_e == 0.0);
    CHECK(r.sigma_a == doctest::Approx(std::exp(0.5 * (0.01 + 0.04 - 1.0))));
  }
  SUBCASE("affine network: exact linear-Gaussian propagation") {
    const double vd = 0.7, vh = 1.9;
    const auto r = predict_adf(m, 1.0, 2.0, vd, vh, 5, {1});
    const double expected = 4.0 * vd + 2.25 * vh + std::exp(0.01 + 0.04 - 1.0);
    CHECK(r.sigma_a * r.sigma_a == doctest::Approx(expected));
    CHECK(r.b_hat == doctest::Approx(2.0 - 3.0 + 3.0));
  }
  SUBCASE("negative variance") { CHECK_THROWS_AS(predict_adf(m, 1, 2, -1, 0, 5, {1}), DomainError); }
}

TEST_CASE("test-time augmentation") {
  SUBCASE("zero augmentation gives zero spread") {
    const auto st = tta_statistics([](const nn::Vector& x) { return nn::Vector(2 * x); }, nn::Vector::Ones(1),
                                   nn::Vector::Zero(1), 20, {1});
    CHECK(st.variance(0) == 0.0);
    CHECK(st.mean(0) == 2.0);
  }
  SUBCASE("linear model doubles the standard deviation") {
    const int T = 200000;
    const auto st = tta_statistics([](const nn::Vector& x) { return nn::Vector(2 * x); }, nn::Vector::Zero(1),
                                   nn::Vector::Ones(1), T, {2});
    CHECK(std::abs(st.variance(0) - 4.0) < 4 * 4.0 * std::sqrt(2.0 / T));
  }
  SUBCASE("TTA on the affine regressor") {
    const auto m = affine_model(regression::Method::heteroscedastic, 0.1);
    const auto r = predict_tta(m, 10.0, 20.0, 0.1, 100000, {3});
    // b = 2d - 1.5h + 3 with sd_d = 1, sd_h = 2: var = 4 + 9
    CHECK(r.sigma_a == doctest::Approx(std::sqrt(13.0)).epsilon(0.01));
    CHECK(r.sigma_e == 0.0);
  }
}

TEST_CASE("batch prediction matches single-point prediction without dropout") {
  auto m = affine_model(regression::Method::adf, 0.1);
  std::vector<biomass::TreeSample> s(3);
  for (int i = 0; i < 3; ++i) {
    s[i].d_true = s[i].d_noisy = 5.0 + 3 * i;
    s[i].h_true = s[i].h_noisy = 2.0 + i;
  }
  const auto batch = predict_batch(m, s, 4, {9});
  for (int i = 0; i < 3; ++i) {
    const auto p = regression::predict_point(m, s[i].d_noisy, s[i].h_noisy);
    CHECK(batch[i].b_hat == doctest::Approx(p.b_hat));
    CHECK(batch[i].sigma_a == doctest::Approx(p.sigma));
  }
}

TEST_CASE("MC dropout spread is positive with dropout and reproducible") {
  biomass::DatasetConfig dc;
  dc.n_per_axis = 30;
  const auto ds = biomass::generate_dataset(dc);
  regression::RegressionConfig rc;
  const auto m = regression::make_model(ds, rc, {4});
  const auto a = predict_mc_dropout(m, 30, 20, 50, {7});
  const auto b = predict_mc_dropout(m, 30, 20, 50, {7});
  CHECK(a.sigma_e > 0.0);
  CHECK(a.b_hat == b.b_hat);
  CHECK(a.sigma_a == b.sigma_a);
}
