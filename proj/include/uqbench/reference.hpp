#pragma once

// Reference aleatoric uncertainty for the biomass benchmark.
//
// A dense regular grid of noise-free inputs is perturbed with the benchmark
// noise model and pushed through the allometric equation. At every node of a
// coarser lattice the squared deviations of the k nearest perturbed outputs
// are pooled into sigma_raw, which is then smoothed with a power law in d^2 h.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uqbench/biomass.hpp"
#include "uqbench/randkit.hpp"

namespace uqbench::reference {

/// What each neighbour's perturbed output is compared against.
enum class Centering {
  /// The neighbour's own noise-free biomass (pure noise contribution).
  neighbour_truth,
  /// The lattice node's noise-free biomass (adds the spatial spread of the pool).
  node_truth,
};

struct McConfig {
  /// Points per axis of the dense input grid. The grid is never stored: each
  /// point's noise is a counter-based function of (seed, index).
  std::int64_t dense_per_axis = 20000;
  int k_neighbors = 3200;
  int lattice_per_axis = 50;
  Centering centering = Centering::neighbour_truth;
};

/// sigma = c * (d^2 h)^p.
struct PowerLawFit {
  double c = 0.0;
  double p = 0.0;

  double operator()(double d, double h) const;
};

struct ReferenceSigmaTable {
  double alpha = 0.0;
  McConfig mc;
  rand::Seed seed{};
  std::vector<double> d_nodes;
  std::vector<double> h_nodes;
  /// Row-major with d as the slow index: value(i, j) = v[i * h_nodes.size() + j].
  std::vector<double> sigma_raw;
  std::vector<double> sigma_smoothed;
  PowerLawFit fit;

  std::size_t index(std::size_t i, std::size_t j) const noexcept { return i * h_nodes.size() + j; }
  std::size_t node_count() const noexcept { return d_nodes.size() * h_nodes.size(); }
  /// Bilinear interpolation of sigma_smoothed; clamps to the lattice.
  double interpolate(double d, double h) const;
};

/// Lattice node coordinates spanning the variable range (endpoints included).
std::vector<double> lattice_axis(biomass::Range range, int count);

/// Pooled Monte-Carlo sigma at every lattice node. sigma_smoothed is left empty.
/// alpha = 0 gives an all-zero table. Throws ConfigError if k exceeds the pool.
ReferenceSigmaTable pooled_sigma(double alpha, const McConfig& mc, rand::Seed seed);

/// Pooled sigma at a single point; used by pooled_sigma and by tests.
double pooled_sigma_at(double d, double h, double alpha, const McConfig& mc, rand::Seed seed);

/// Fits the power law in log space to the positive raw sigmas and fills
/// sigma_smoothed. All-zero input yields an all-zero smoothed table.
ReferenceSigmaTable smooth_sigma(ReferenceSigmaTable table);

/// First-order propagation of sigma_D = alpha d, sigma_H = alpha h:
/// 0.976 * alpha * sqrt(5) * biomass(d, h).
double delta_method_sigma(double d, double h, double alpha);

// CSV columns: d,h,sigma_raw,sigma_smoothed
void write_csv(const ReferenceSigmaTable& t, const std::filesystem::path& path);
void write_metadata(const ReferenceSigmaTable& t, const std::filesystem::path& path);
ReferenceSigmaTable read_table(const std::filesystem::path& csv_path, const std::filesystem::path& json_path);

}  // namespace uqbench::reference
