#include "uqbench/biomass.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::biomass {

double biomass(double d, double h, double rho) {
  if (!(d >= 0.0) || !(h >= 0.0)) throw DomainError("biomass: diameter and height must be non-negative");
  if (!(rho > 0.0)) throw DomainError("biomass: wood density must be positive");
  return kAllometricFactor * std::pow(rho * d * d * h, kAllometricExponent);
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(SplitStrategy s) {
  return s == SplitStrategy::random80_20 ? "random80_20" : "checkerboard";
}

SplitStrategy parse_split_strategy(const std::string& s) {
  if (s == "random80_20") return SplitStrategy::random80_20;
  if (s == "checkerboard") return SplitStrategy::checkerboard;
  throw ConfigError("unknown split strategy '" + s + "'");
}

namespace {

int cell_index(double x, Range r, int cells) {
  if (!r.contains(x)) throw DomainError("checkerboard: point outside grid range");
  const int i = static_cast<int>(std::floor((x - r.lo) / r.width() * cells));
  return std::min(i, cells - 1);
}

}  // namespace

std::pair<int, int> CheckerboardGrid::cell(double d, double h) const {
  if (cells_per_axis < 1) throw ConfigError("checkerboard needs at least one cell per axis");
  return {cell_index(d, d_range, cells_per_axis), cell_index(h, h_range, cells_per_axis)};
}

Split CheckerboardGrid::assign(double d, double h) const {
  const auto [i, j] = cell(d, h);
  const bool even = (i + j) % 2 == 0;
  return even == even_is_train ? Split::train : Split::test;
}

Split checkerboard_assign(const CheckerboardGrid& grid, double d, double h) {
  return grid.assign(d, h);
}

std::size_t RegressionDataset::count(Split s) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [s](const TreeSample& t) { return t.split == s; }));
}

std::vector<TreeSample> RegressionDataset::subset(Split s) const {
  std::vector<TreeSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [s](const TreeSample& t) { return t.split == s; });
  return out;
}

double draw_in_range(rand::Stream& rng, const rand::GammaParams& params, Range range) {
  for (;;) {
    const double x = rand::sample_gamma(rng, params);
    if (range.contains(x)) return x;
  }
}

RegressionDataset generate_dataset(const DatasetConfig& config) {
  if (!(config.alpha >= 0.0)) throw ParameterError("noise level alpha must be non-negative");
  if (config.n_per_axis < 2) throw ParameterError("n_per_axis must be at least 2");
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    throw ParameterError("train_fraction must lie in (0, 1)");
  }

  const auto n = static_cast<std::size_t>(config.n_per_axis);
  rand::Stream rng_d(config.seed, "biomass.diameter");
  rand::Stream rng_h(config.seed, "biomass.height");
  rand::Stream rng_noise(config.seed, "biomass.noise");

  std::vector<double> diameters(n), heights(n);
  for (auto& d : diameters) d = draw_in_range(rng_d, kDiameterGamma, kDiameterRange);
  for (auto& h : heights) h = draw_in_range(rng_h, kHeightGamma, kHeightRange);

  RegressionDataset ds;
  ds.config = config;
  ds.generated_count = n * n;
  ds.samples.reserve(n * n);
  for (const double d : diameters) {
    for (const double h : heights) {
      // Noise is drawn for every pair so the stream does not depend on
      // which pairs survive the threshold.
      const double eps_d = config.alpha * d * rng_noise.normal();
      const double eps_h = config.alpha * h * rng_noise.normal();
      const double b = biomass(d, h);
      if (b > kBiomassThreshold) continue;
      TreeSample t;
      t.d_true = d;
      t.h_true = h;
      t.d_noisy = std::max(0.0, d + eps_d);
      t.h_noisy = std::max(0.0, h + eps_h);
      t.b_true = b;
      t.noise_level = config.alpha;
      ds.samples.push_back(t);
    }
  }
  if (ds.samples.empty()) throw GenerationError("no samples survived the biomass threshold");

  if (config.strategy == SplitStrategy::checkerboard) {
    for (auto& t : ds.samples) t.split = config.grid.assign(t.d_true, t.h_true);
  } else {
    std::vector<std::size_t> order(ds.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rand::Stream rng_split(config.seed, "biomass.split");
    rand::shuffle(order, rng_split);
    const auto n_train = static_cast<std::size_t>(
        std::llround(config.train_fraction * static_cast<double>(order.size())));
    for (std::size_t k = 0; k < order.size(); ++k) {
      ds.samples[order[k]].split = k < n_train ? Split::train : Split::test;
    }
  }
  for (auto& t : ds.samples) {
    if (t.split == Split::test) {
      t.d_noisy = t.d_true;
      t.h_noisy = t.h_true;
    }
  }
  return ds;
}

void write_csv(const RegressionDataset& ds, const std::filesystem::path& path) {
  auto out = io::open_for_write(path);
  out << "d_true,h_true,d_noisy,h_noisy,b_true,split\n";
  for (const auto& t : ds.samples) {
    out << io::csv_line({io::fmt_double(t.d_true), io::fmt_double(t.h_true), io::fmt_double(t.d_noisy),
                         io::fmt_double(t.h_noisy), io::fmt_double(t.b_true), to_string(t.split)});
  }
}

void write_metadata(const RegressionDataset& ds, const std::filesystem::path& path) {
  const auto& c = ds.config;
  io::json j;
  j["alpha"] = c.alpha;
  j["n_per_axis"] = c.n_per_axis;
  j["strategy"] = to_string(c.strategy);
  j["seed"] = c.seed.value;
  j["train_fraction"] = c.train_fraction;
  j["checkerboard"] = {{"cells_per_axis", c.grid.cells_per_axis}, {"even_is_train", c.grid.even_is_train}};
  j["generated_count"] = ds.generated_count;
  j["retained_count"] = ds.samples.size();
  j["train_count"] = ds.count(Split::train);
  j["test_count"] = ds.count(Split::test);
  io::write_json(path, j);
}

RegressionDataset read_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
  const auto meta = io::read_json(json_path);
  RegressionDataset ds;
  try {
    ds.config.alpha = meta.at("alpha").get<double>();
    ds.config.n_per_axis = meta.at("n_per_axis").get<int>();
    ds.config.strategy = parse_split_strategy(meta.at("strategy").get<std::string>());
    ds.config.seed = rand::Seed{meta.at("seed").get<std::uint64_t>()};
    ds.config.train_fraction = meta.value("train_fraction", 0.8);
    if (meta.contains("checkerboard")) {
      ds.config.grid.cells_per_axis = meta["checkerboard"].value("cells_per_axis", 5);
      ds.config.grid.even_is_train = meta["checkerboard"].value("even_is_train", true);
    }
    ds.generated_count = meta.at("generated_count").get<std::size_t>();
  } catch (const io::json::exception& e) {
    throw IoError("bad dataset metadata " + json_path.string() + ": " + e.what());
  }

  const auto table = io::read_csv(csv_path);
  const auto cd = table.column("d_true"), ch = table.column("h_true"), cdn = table.column("d_noisy"),
             chn = table.column("h_noisy"), cb = table.column("b_true"), cs = table.column("split");
  ds.samples.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    TreeSample t;
    t.d_true = io::parse_double(row[cd]);
    t.h_true = io::parse_double(row[ch]);
    t.d_noisy = io::parse_double(row[cdn]);
    t.h_noisy = io::parse_double(row[chn]);
    t.b_true = io::parse_double(row[cb]);
    t.noise_level = ds.config.alpha;
    if (row[cs] == "train") {
      t.split = Split::train;
    } else if (row[cs] == "test") {
      t.split = Split::test;
    } else {
      throw IoError("unknown split tag '" + row[cs] + "'");
    }
    ds.samples.push_back(t);
  }
  return ds;
}

}  // namespace uqbench::biomass
