#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "uqbench/biomass.hpp"
#include "uqbench/error.hpp"

using namespace uqbench;
using namespace uqbench::biomass;
namespace bm = uqbench::biomass;

TEST_CASE("allometric biomass") {
  CHECK(bm::biomass(0.0, 20.0, 0.65) == 0.0);
  // 0.0673 * (0.65 * 900 * 20)^0.976 evaluated independently
  const double expected = 0.0673 * std::exp(0.976 * std::log(0.65 * 30.0 * 30.0 * 20.0));
  CHECK(bm::biomass(30.0, 20.0, 0.65) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs(bm::biomass(30.0, 20.0, 0.65) - 628.9) <= 0.1);
  CHECK_THROWS_AS(bm::biomass(-1.0, 20.0), DomainError);
  CHECK_THROWS_AS(bm::biomass(30.0, -1.0), DomainError);
  CHECK_THROWS_AS(bm::biomass(30.0, 20.0, 0.0), DomainError);
}

TEST_CASE("biomass is monotone in d and h") {
  for (double d = 5; d < 150; d += 7) {
    for (double h = 2; h < 120; h += 9) {
      CHECK(bm::biomass(d + 1, h) > bm::biomass(d, h));
      CHECK(bm::biomass(d, h + 1) > bm::biomass(d, h));
    }
  }
}

TEST_CASE("checkerboard cells") {
  const CheckerboardGrid g;
  CHECK(g.cell(10, 5) == std::pair{0, 0});
  CHECK(g.assign(10, 5) == Split::train);
  CHECK(g.cell(40, 5) == std::pair{1, 0});
  CHECK(g.assign(40, 5) == Split::test);
  CHECK(g.cell(150, 120) == std::pair{4, 4});
  CHECK(g.assign(150, 120) == Split::train);
  // Interior boundary: 5 + 29 starts the second diameter cell.
  CHECK(g.cell(34.0, 5).first == 1);
  CHECK(g.cell(33.999, 5).first == 0);
  CHECK_THROWS_AS(g.cell(4.9, 5), DomainError);
  CheckerboardGrid odd = g;
  odd.even_is_train = false;
  CHECK(checkerboard_assign(odd, 10, 5) == Split::test);
}

TEST_CASE("dataset generation") {
  DatasetConfig c;
  c.n_per_axis = 60;
  c.seed = {11};
  SUBCASE("alpha 0 leaves inputs clean") {
    c.alpha = 0.0;
    const auto ds = generate_dataset(c);
    for (const auto& t : ds.samples) {
      CHECK(t.d_noisy == t.d_true);
      CHECK(t.h_noisy == t.h_true);
    }
  }
  SUBCASE("invariants") {
    c.alpha = 0.1;
    const auto ds = generate_dataset(c);
    CHECK(ds.generated_count == 3600);
    CHECK(ds.samples.size() <= ds.generated_count);
    std::size_t noisy = 0;
    for (const auto& t : ds.samples) {
      CHECK(t.b_true <= kBiomassThreshold);
      CHECK(t.b_true == doctest::Approx(bm::biomass(t.d_true, t.h_true)));
      CHECK(kDiameterRange.contains(t.d_true));
      CHECK(kHeightRange.contains(t.h_true));
      if (t.split == Split::test) {
        CHECK(t.d_noisy == t.d_true);
        CHECK(t.h_noisy == t.h_true);
      } else {
        noisy += t.d_noisy != t.d_true;
      }
    }
    CHECK(noisy == ds.count(Split::train));
    const double frac = double(ds.count(Split::train)) / ds.samples.size();
    CHECK(frac == doctest::Approx(0.8).epsilon(0.01));
  }
  SUBCASE("noise scale is proportional") {
    c.alpha = 0.1;
    c.n_per_axis = 150;
    const auto ds = generate_dataset(c);
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& t : ds.samples) {
      if (t.split != Split::train) continue;
      const double z = (t.d_noisy - t.d_true) / (0.1 * t.d_true);
      s += z * z;
      ++n;
    }
    CHECK(s / n == doctest::Approx(1.0).epsilon(0.03));
  }
  SUBCASE("same seed, same dataset; test points shared across alpha") {
    c.alpha = 0.05;
    const auto a = generate_dataset(c);
    const auto b = generate_dataset(c);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].d_noisy == b.samples[i].d_noisy);
    c.alpha = 0.2;
    const auto ta = a.subset(Split::test), tb = generate_dataset(c).subset(Split::test);
    REQUIRE(ta.size() == tb.size());
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta[i].d_true == tb[i].d_true);
  }
  SUBCASE("checkerboard split follows the grid") {
    c.alpha = 0.1;
    c.strategy = SplitStrategy::checkerboard;
    const auto ds = generate_dataset(c);
    for (const auto& t : ds.samples) CHECK(t.split == c.grid.assign(t.d_true, t.h_true));
  }
  SUBCASE("errors") {
    c.alpha = -0.1;
    CHECK_THROWS_AS(generate_dataset(c), ParameterError);
    c.alpha = 0.1;
    c.n_per_axis = 1;
    CHECK_THROWS_AS(generate_dataset(c), ParameterError);
  }
}

TEST_CASE("size multiplier scales the generated grid") {
  DatasetConfig c;
  c.alpha = 0.1;
  c.n_per_axis = 30;
  const auto small = generate_dataset(c);
  c.n_per_axis = 120;
  const auto big = generate_dataset(c);
  CHECK(big.generated_count == 16 * small.generated_count);
}

TEST_CASE("dataset CSV round trip") {
  DatasetConfig c;
  c.alpha = 0.1;
  c.n_per_axis = 25;
  c.seed = {5};
  const auto ds = generate_dataset(c);
  const auto dir = std::filesystem::temp_directory_path() / "uqbench_test_biomass";
  write_csv(ds, dir / "d.csv");
  write_metadata(ds, dir / "d.json");
  const auto back = read_dataset(dir / "d.csv", dir / "d.json");
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].d_noisy == ds.samples[i].d_noisy);
    CHECK(back.samples[i].b_true == ds.samples[i].b_true);
    CHECK(back.samples[i].split == ds.samples[i].split);
  }
  CHECK(back.config.alpha == 0.1);
  CHECK(back.generated_count == ds.generated_count);
  std::filesystem::remove_all(dir);
}
