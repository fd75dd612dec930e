#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "uqbench/error.hpp"
#include "uqbench/io.hpp"
#include "uqbench/reference.hpp"

using namespace uqbench;
using namespace uqbench::reference;

namespace {

// Direct Monte-Carlo spread of B(d(1 + a z1), h(1 + a z2)) around B(d, h).
double brute_sigma(double d, double h, double alpha, int n, std::uint64_t seed) {
  rand::Stream rng({seed});
  const double b0 = biomass::biomass(d, h);
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dn = std::max(0.0, d * (1 + alpha * rng.normal()));
    const double hn = std::max(0.0, h * (1 + alpha * rng.normal()));
    const double e = biomass::biomass(dn, hn) - b0;
    ss += e * e;
  }
  return std::sqrt(ss / n);
}

double rms_vs_delta(const ReferenceSigmaTable& t, const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.d_nodes.size(); ++i) {
    for (std::size_t j = 0; j < t.h_nodes.size(); ++j) {
      const double e = v[t.index(i, j)] - delta_method_sigma(t.d_nodes[i], t.h_nodes[j], t.alpha);
      s += e * e;
    }
  }
  return std::sqrt(s / t.node_count());
}

}  // namespace

TEST_CASE("delta-method sigma") {
  CHECK(delta_method_sigma(30, 20, 0.0) == 0.0);
  CHECK(std::abs(delta_method_sigma(30, 20, 0.1) - 137.2) <= 0.5);
  // Relative sigma is constant: 0.976 * sqrt(5) * alpha.
  for (double d : {7.0, 30.0, 90.0}) {
    for (double h : {3.0, 20.0, 60.0}) {
      CHECK(delta_method_sigma(d, h, 0.1) / biomass::biomass(d, h) == doctest::Approx(0.21824).epsilon(1e-4));
    }
  }
  CHECK_THROWS_AS(delta_method_sigma(30, 20, -0.1), ParameterError);
}

TEST_CASE("lattice axis spans the range") {
  const auto a = lattice_axis({5, 150}, 50);
  CHECK(a.size() == 50);
  CHECK(a.front() == 5.0);
  CHECK(a.back() == 150.0);
  CHECK_THROWS_AS(lattice_axis({5, 150}, 1), ConfigError);
}

TEST_CASE("pooled sigma at single points") {
  const McConfig mc;
  SUBCASE("alpha 0.01 at (30, 20)") {
    const double s = pooled_sigma_at(30, 20, 0.01, mc, {1});
    CHECK(std::abs(s - 13.7) / 13.7 <= 0.05);
    CHECK(std::abs(s - delta_method_sigma(30, 20, 0.01)) / s <= 0.05);
  }
  SUBCASE("alpha 0.10 at (30, 20)") {
    const double s = pooled_sigma_at(30, 20, 0.10, mc, {1});
    CHECK(std::abs(s - 137.0) / 137.0 <= 0.10);
    // Independent direct simulation at the point.
    CHECK(s == doctest::Approx(brute_sigma(30, 20, 0.10, 400000, 77)).epsilon(0.04));
  }
  SUBCASE("alpha 0") { CHECK(pooled_sigma_at(30, 20, 0.0, mc, {1}) == 0.0); }
  SUBCASE("k larger than the pool") {
    McConfig bad;
    bad.dense_per_axis = 10;
    bad.k_neighbors = 200;
    CHECK_THROWS_AS(pooled_sigma(0.1, bad, {1}), ConfigError);
  }
}

TEST_CASE("pooled table, smoothing and persistence") {
  McConfig mc;
  mc.lattice_per_axis = 20;
  SUBCASE("alpha 0 gives zeros, smoothing keeps zeros") {
    const auto t = smooth_sigma(pooled_sigma(0.0, mc, {1}));
    for (const double v : t.sigma_raw) CHECK(v == 0.0);
    for (const double v : t.sigma_smoothed) CHECK(v == 0.0);
  }
  SUBCASE("exact power law is reproduced") {
    ReferenceSigmaTable t;
    t.alpha = 0.1;
    t.d_nodes = lattice_axis(biomass::kDiameterRange, 6);
    t.h_nodes = lattice_axis(biomass::kHeightRange, 5);
    for (const double d : t.d_nodes) {
      for (const double h : t.h_nodes) t.sigma_raw.push_back(0.02 * std::pow(d * d * h, 0.9));
    }
    const auto s = smooth_sigma(t);
    CHECK(s.fit.c == doctest::Approx(0.02).epsilon(1e-9));
    CHECK(s.fit.p == doctest::Approx(0.9).epsilon(1e-9));
    for (std::size_t i = 0; i < s.sigma_raw.size(); ++i) {
      CHECK(s.sigma_smoothed[i] == doctest::Approx(s.sigma_raw[i]).epsilon(1e-10));
    }
  }
  SUBCASE("alpha 0.05: smoothing moves the table toward the oracle") {
    const auto t = smooth_sigma(pooled_sigma(0.05, mc, {3}));
    CHECK(rms_vs_delta(t, t.sigma_smoothed) < rms_vs_delta(t, t.sigma_raw));
  }
  SUBCASE("CSV has one row per lattice node and round-trips") {
    const auto t = smooth_sigma(pooled_sigma(0.01, mc, {4}));
    const auto dir = std::filesystem::temp_directory_path() / "uqbench_test_reference";
    write_csv(t, dir / "s.csv");
    write_metadata(t, dir / "s.json");
    CHECK(io::read_csv(dir / "s.csv").rows.size() == 400);
    const auto back = read_table(dir / "s.csv", dir / "s.json");
    CHECK(back.fit.c == t.fit.c);
    CHECK(back.interpolate(33.3, 17.7) == t.interpolate(33.3, 17.7));
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("interpolation hits nodes and clamps") {
  ReferenceSigmaTable t;
  t.d_nodes = {0, 1, 2};
  t.h_nodes = {0, 1};
  t.sigma_smoothed = {0, 1, 2, 3, 4, 5};  // value(i, j) = 2i + j
  CHECK(t.interpolate(1, 1) == 3.0);
  CHECK(t.interpolate(0.5, 0.5) == doctest::Approx(1.5));
  CHECK(t.interpolate(-5, 0) == 0.0);
  CHECK(t.interpolate(9, 9) == 5.0);
}
