#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "uqbench/error.hpp"
#include "uqbench/evalkit.hpp"
#include "uqbench/regression.hpp"

using namespace uqbench;
using namespace uqbench::regression;

namespace {

biomass::RegressionDataset small_dataset(double alpha, int n = 60) {
  biomass::DatasetConfig c;
  c.alpha = alpha;
  c.n_per_axis = n;
  c.seed = {21};
  return biomass::generate_dataset(c);
}

}  // namespace

TEST_CASE("method names") {
  CHECK(parse_method("mc_dropout") == Method::heteroscedastic);
  CHECK(parse_method("adf") == Method::adf);
  CHECK(to_string(Method::adf) == "adf");
  CHECK_THROWS_AS(parse_method("bayes"), ConfigError);
}

TEST_CASE("standardizer") {
  const auto ds = small_dataset(0.1);
  const auto train = ds.subset(biomass::Split::train);
  const auto s = Standardizer::fit(train);
  double md = 0.0, vd = 0.0;
  for (const auto& t : train) md += (s.inputs(t.d_noisy, t.h_noisy))(0);
  md /= train.size();
  for (const auto& t : train) vd += std::pow(s.inputs(t.d_noisy, t.h_noisy)(0) - md, 2);
  vd /= train.size();
  CHECK(std::abs(md) < 1e-9);
  CHECK(vd == doctest::Approx(1.0).epsilon(1e-3));
  const auto v = s.input_variance(4.0, 9.0);
  CHECK(v(0) == doctest::Approx(4.0 / (s.d_scale * s.d_scale)));
  CHECK(v(1) == doctest::Approx(9.0 / (s.h_scale * s.h_scale)));
  CHECK_THROWS_AS(Standardizer::fit({}), ParameterError);
}

TEST_CASE("default model layout") {
  const auto ds = small_dataset(0.1);
  const auto m = make_model(ds, {}, {1});
  CHECK(m.net.layer_sizes() == std::vector<int>{2, 64, 64, 64, 2});
  CHECK(m.net.output_size() == 2);
  CHECK(m.net.dropout_rate() == doctest::Approx(0.1));
  CHECK(m.alpha == 0.1);
}

TEST_CASE("training behaviour") {
  const auto ds = small_dataset(0.1);
  RegressionConfig rc;
  rc.train = {25, 64, {nn::OptimizerConfig::Kind::adam, 3e-3}, 0.95};
  SUBCASE("zero epochs leave the model unchanged") {
    auto m = make_model(ds, rc, {2});
    const auto before = m.net.flatten();
    nn::TrainConfig none = rc.train;
    none.epochs = 0;
    train(m, ds, none, {2});
    CHECK(m.net.flatten() == before);
  }
  SUBCASE("first-epoch loss decreases, fit is usable, runs are deterministic") {
    auto a = make_model(ds, rc, {3});
    auto b = make_model(ds, rc, {3});
    const auto st = train(a, ds, rc.train, {3});
    train(b, ds, rc.train, {3});
    CHECK(a.net.flatten() == b.net.flatten());
    const auto& first = st.first_epoch_batches;
    REQUIRE(first.size() > 10);
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      head += first[i];
      tail += first[first.size() - 1 - i];
    }
    CHECK(tail < head);
    const auto test = ds.subset(biomass::Split::test);
    std::vector<double> truth, pred;
    for (const auto& t : test) {
      truth.push_back(t.b_true);
      pred.push_back(predict_point(a, t.d_true, t.h_true).b_hat);
    }
    CHECK(eval::r_squared(pred, truth) > 0.9);
  }
  SUBCASE("ADF flavour trains and predicts finite sigma") {
    rc.method = Method::adf;
    rc.train.epochs = 5;
    auto m = make_model(ds, rc, {4});
    train(m, ds, rc.train, {4});
    const auto p = predict_point(m, 30, 20);
    CHECK(std::isfinite(p.b_hat));
    CHECK(p.sigma > 0.0);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto ds = small_dataset(0.05);
  RegressionConfig rc;
  rc.method = Method::adf;
  auto m = make_model(ds, rc, {5});
  const auto path = std::filesystem::temp_directory_path() / "uqbench_test_regression" / "ckpt.json";
  save_checkpoint(m, path);
  const auto back = load_checkpoint(path);
  CHECK(back.net.flatten() == m.net.flatten());
  CHECK(back.config.method == Method::adf);
  CHECK(back.alpha == m.alpha);
  CHECK(predict_point(back, 40, 25).b_hat == predict_point(m, 40, 25).b_hat);
  std::filesystem::remove_all(path.parent_path());
}
