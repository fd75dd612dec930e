#include "uqbench/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::eval {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_len) {
  if (a.size() != b.size()) throw ShapeError("metric inputs must have equal length");
  if (a.size() < min_len) throw ShapeError("metric inputs are too short");
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double r_squared(std::span<const double> pred, std::span<const double> ref) {
  check_pair(pred, ref, 2);
  const double m = mean_of(ref);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ss_res += (ref[i] - pred[i]) * (ref[i] - pred[i]);
    ss_tot += (ref[i] - m) * (ref[i] - m);
  }
  if (!(ss_tot > 0.0)) throw MetricError("R^2 is undefined for a constant reference");
  return 1.0 - ss_res / ss_tot;
}

double rmse(std::span<const double> pred, std::span<const double> ref) {
  check_pair(pred, ref, 1);
  double ss = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) ss += (pred[i] - ref[i]) * (pred[i] - ref[i]);
  return std::sqrt(ss / static_cast<double>(ref.size()));
}

double pct_rmse(std::span<const double> pred, std::span<const double> ref) {
  check_pair(pred, ref, 1);
  const double m = mean_of(ref);
  if (m == 0.0) throw MetricError("%RMSE is undefined for a zero-mean reference");
  return 100.0 * rmse(pred, ref) / m;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 2);
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw MetricError("correlation is undefined for a constant vector");
  return sxy / std::sqrt(sxx * syy);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ParameterError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ParameterError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * values[lo] + w * values[hi];
}

EvalReport evaluate(std::span<const double> pred, std::span<const double> ref) {
  return {r_squared(pred, ref), rmse(pred, ref), pct_rmse(pred, ref), {}};
}

double CorrelationResult::fraction_above(double threshold) const {
  if (coefficients.empty()) return 0.0;
  const auto n = std::count_if(coefficients.begin(), coefficients.end(), [&](double c) { return c > threshold; });
  return static_cast<double>(n) / static_cast<double>(coefficients.size());
}

CorrelationResult uncertainty_correlation(const std::vector<std::vector<double>>& predicted,
                                          const std::vector<std::vector<double>>& reference) {
  if (predicted.size() != reference.size()) throw ShapeError("predicted and reference level counts differ");
  if (predicted.size() < 2) throw ParameterError("at least two noise levels are required");
  const std::size_t points = predicted.front().size();
  for (std::size_t l = 0; l < predicted.size(); ++l) {
    if (predicted[l].size() != points || reference[l].size() != points) {
      throw ShapeError("every level must hold one value per point");
    }
  }
  CorrelationResult r;
  std::vector<double> p(predicted.size()), q(predicted.size());
  for (std::size_t i = 0; i < points; ++i) {
    for (std::size_t l = 0; l < predicted.size(); ++l) {
      p[l] = predicted[l][i];
      q[l] = reference[l][i];
    }
    try {
      r.coefficients.push_back(pearson(p, q));
    } catch (const MetricError&) {
      r.skipped.push_back(i);
    }
  }
  if (!r.coefficients.empty()) {
    for (const double level : {0.05, 0.10, 0.25, 0.50}) r.quantiles.emplace_back(level, quantile(r.coefficients, level));
    r.p10 = quantile(r.coefficients, 0.10);
  }
  return r;
}

std::vector<HistogramBin> histogram(std::span<const double> values, double lo, double hi, int bins) {
  if (bins < 1 || !(hi > lo)) throw ParameterError("histogram needs bins >= 1 and hi > lo");
  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  const double width = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].left = lo + b * width;
    out[static_cast<std::size_t>(b)].right = b + 1 == bins ? hi : lo + (b + 1) * width;
  }
  for (const double v : values) {
    if (v < lo || v > hi) continue;
    const auto b = std::min(static_cast<std::size_t>((v - lo) / width), out.size() - 1);
    ++out[b].count;
  }
  return out;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  io::json j;
  j["r2"] = report.r2;
  j["rmse"] = report.rmse;
  j["pct_rmse"] = report.pct_rmse;
  j["corr_quantiles"] = io::json::array();
  for (const auto& [q, v] : report.corr_quantiles) j["corr_quantiles"].push_back({{"quantile", q}, {"value", v}});
  io::write_json(path, j);
}

void write_histogram_csv(const std::vector<HistogramBin>& bins, const std::filesystem::path& path) {
  auto out = io::open_for_write(path);
  out << "bin_left,bin_right,count\n";
  for (const auto& b : bins) {
    out << io::csv_line({io::fmt_double(b.left), io::fmt_double(b.right), std::to_string(b.count)});
  }
}

void write_histogram_svg(const std::vector<HistogramBin>& bins, const std::string& title,
                         const std::filesystem::path& path) {
  constexpr double width = 480, height = 320, margin = 40;
  std::size_t peak = 1;
  for (const auto& b : bins) peak = std::max(peak, b.count);
  const double bar_w = (width - 2 * margin) / static_cast<double>(std::max<std::size_t>(bins.size(), 1));
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
      width, height, width / 2, title);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double h = (height - 2 * margin) * static_cast<double>(bins[i].count) / static_cast<double>(peak);
    svg += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"#3a7d44\"/>\n",
                       margin + static_cast<double>(i) * bar_w, height - margin - h, bar_w * 0.9, h);
  }
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", margin,
                     height - margin, width - margin);
  if (!bins.empty()) {
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{:.2f}</text>\n", margin, height - margin + 15, bins.front().left);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2f}</text>\n", width - margin,
                       height - margin + 15, bins.back().right);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n</svg>\n", margin - 4, margin + 4, peak);
  io::write_text(path, svg);
}

}  // namespace uqbench::eval
