#pragma once

// Scoring helpers: R^2, RMSE, %RMSE, Pearson correlation, quantiles,
// per-point uncertainty correlation across noise levels, histograms.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace uqbench::eval {

/// 1 - SS_res / SS_tot with SS_tot about the reference mean.
/// Throws MetricError for a constant reference, ShapeError on bad lengths.
double r_squared(std::span<const double> pred, std::span<const double> ref);
double rmse(std::span<const double> pred, std::span<const double> ref);
/// 100 * RMSE / mean(ref). Throws MetricError when mean(ref) == 0.
double pct_rmse(std::span<const double> pred, std::span<const double> ref);
/// Throws MetricError if either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);
/// Linear-interpolation quantile (q in [0, 1]) of an unsorted sample.
double quantile(std::vector<double> values, double q);

struct EvalReport {
  double r2 = 0.0;
  double rmse = 0.0;
  double pct_rmse = 0.0;
  std::vector<std::pair<double, double>> corr_quantiles;
};

EvalReport evaluate(std::span<const double> pred, std::span<const double> ref);

struct CorrelationResult {
  /// Per-point coefficients for points with non-constant vectors.
  std::vector<double> coefficients;
  /// Indices of points skipped because a vector was constant.
  std::vector<std::size_t> skipped;
  /// 10th percentile of the coefficients.
  double p10 = 0.0;
  /// (q, value) for q in {0.05, 0.10, 0.25, 0.50}.
  std::vector<std::pair<double, double>> quantiles;

  double fraction_above(double threshold) const;
};

/// predicted[level][point] and reference[level][point]; for every point the
/// Pearson correlation between its predicted and reference vectors across levels.
CorrelationResult uncertainty_correlation(const std::vector<std::vector<double>>& predicted,
                                          const std::vector<std::vector<double>>& reference);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

std::vector<HistogramBin> histogram(std::span<const double> values, double lo, double hi, int bins);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
// CSV columns: bin_left,bin_right,count
void write_histogram_csv(const std::vector<HistogramBin>& bins, const std::filesystem::path& path);
/// Minimal standalone SVG bar chart of a histogram.
void write_histogram_svg(const std::vector<HistogramBin>& bins, const std::string& title,
                         const std::filesystem::path& path);

}  // namespace uqbench::eval
