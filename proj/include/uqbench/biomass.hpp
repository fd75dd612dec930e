#pragma once

// Synthetic single-tree biomass benchmark: allometric ground truth,
// Gamma-distributed tree dimensions, proportional measurement noise and
// train/test splitting.
//
// Units follow the Chave convention: diameter in cm, height in m,
// wood density in g/cm^3, biomass in kg.

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "uqbench/randkit.hpp"

namespace uqbench::biomass {

inline constexpr double kWoodDensity = 0.65;
inline constexpr double kAllometricFactor = 0.0673;
inline constexpr double kAllometricExponent = 0.976;
/// Samples whose noise-free biomass exceeds this are discarded.
inline constexpr double kBiomassThreshold = 2236.8;

struct Range {
  double lo;
  double hi;

  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

inline constexpr Range kDiameterRange{5.0, 150.0};
inline constexpr Range kHeightRange{1.2, 120.0};
inline constexpr rand::GammaParams kDiameterGamma{0.68, 5.00, 30.18};
inline constexpr rand::GammaParams kHeightGamma{1.92, 1.18, 7.75};

/// Allometric ground truth 0.0673 * (rho d^2 h)^0.976.
/// Throws DomainError on negative d or h, or non-positive rho.
double biomass(double d, double h, double rho = kWoodDensity);

enum class Split { train, test };
enum class SplitStrategy { random80_20, checkerboard };

std::string to_string(Split s);
std::string to_string(SplitStrategy s);
SplitStrategy parse_split_strategy(const std::string& s);

struct TreeSample {
  double d_true = 0.0;
  double h_true = 0.0;
  double d_noisy = 0.0;
  double h_noisy = 0.0;
  double b_true = 0.0;
  double noise_level = 0.0;
  Split split = Split::train;
};

/// Alternating train/test cells over the (d, h) rectangle.
///
/// Cell intervals are half-open except the last one on each axis, which is
/// closed so the cells partition the rectangle exactly.
struct CheckerboardGrid {
  Range d_range = kDiameterRange;
  Range h_range = kHeightRange;
  int cells_per_axis = 5;
  /// Cell (i, j) is train iff (i + j) is even when true, odd when false.
  bool even_is_train = true;

  std::pair<int, int> cell(double d, double h) const;
  Split assign(double d, double h) const;
};

/// Convenience wrapper over CheckerboardGrid::assign.
Split checkerboard_assign(const CheckerboardGrid& grid, double d, double h);

struct DatasetConfig {
  double alpha = 0.10;
  int n_per_axis = 200;
  SplitStrategy strategy = SplitStrategy::random80_20;
  rand::Seed seed{};
  double train_fraction = 0.8;
  CheckerboardGrid grid{};
};

struct RegressionDataset {
  DatasetConfig config;
  std::vector<TreeSample> samples;
  /// Pairs formed before the biomass threshold was applied.
  std::size_t generated_count = 0;

  std::size_t count(Split s) const noexcept;
  std::vector<TreeSample> subset(Split s) const;
};

/// Draws n_per_axis diameters and heights, forms their product grid, adds
/// N(0, (alpha x)^2) noise, labels with noise-free biomass, drops samples
/// above the threshold and tags splits. Test samples keep noise-free inputs.
RegressionDataset generate_dataset(const DatasetConfig& config);

/// Draws one Gamma variate, redrawing until it falls in range.
double draw_in_range(rand::Stream& rng, const rand::GammaParams& params, Range range);

// CSV columns: d_true,h_true,d_noisy,h_noisy,b_true,split
void write_csv(const RegressionDataset& ds, const std::filesystem::path& path);
void write_metadata(const RegressionDataset& ds, const std::filesystem::path& path);
/// Reads a dataset back from its CSV and JSON companion.
RegressionDataset read_dataset(const std::filesystem::path& csv_path,
                               const std::filesystem::path& json_path);

}  // namespace uqbench::biomass
