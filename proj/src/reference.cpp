#include "uqbench/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::reference {

using biomass::kDiameterRange;
using biomass::kHeightRange;

double PowerLawFit::operator()(double d, double h) const {
  if (c == 0.0) return 0.0;
  return c * std::pow(d * d * h, p);
}

std::vector<double> lattice_axis(biomass::Range range, int count) {
  if (count < 2) throw ConfigError("lattice needs at least two nodes per axis");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = range.lo + range.width() * i / (count - 1);
  }
  out.back() = range.hi;
  return out;
}

namespace {

struct Candidate {
  double dist2;
  std::uint64_t index;
};

// Two standard normals for dense point `index` (Box-Muller on counter hashes).
std::pair<double, double> dense_normals(std::uint64_t key, std::uint64_t index) {
  const double u1 = rand::to_unit_open(rand::mix64(key + 2 * index));
  const double u2 = rand::to_unit_open(rand::mix64(key + 2 * index + 1));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

void validate(const McConfig& mc) {
  if (mc.dense_per_axis < 2) throw ConfigError("dense grid needs at least two points per axis");
  if (mc.k_neighbors < 1) throw ConfigError("k_neighbors must be positive");
  const double pool = static_cast<double>(mc.dense_per_axis) * static_cast<double>(mc.dense_per_axis);
  if (static_cast<double>(mc.k_neighbors) > pool) {
    throw ConfigError("k_neighbors exceeds the number of dense samples");
  }
}

double pooled_at(double d0, double h0, double alpha, const McConfig& mc, std::uint64_t key,
                 std::vector<Candidate>& buf) {
  const auto n = mc.dense_per_axis;
  const auto k = static_cast<std::size_t>(mc.k_neighbors);
  const double u0 = (d0 - kDiameterRange.lo) / kDiameterRange.width();
  const double v0 = (h0 - kHeightRange.lo) / kHeightRange.width();
  const double step = 1.0 / static_cast<double>(n);

  // A corner node only sees a quarter disc, so size the window for that case.
  const auto half = static_cast<std::int64_t>(std::ceil(std::sqrt(4.0 * static_cast<double>(k) / std::numbers::pi))) + 2;
  const auto a0 = static_cast<std::int64_t>(std::floor(u0 * static_cast<double>(n)));
  const auto b0 = static_cast<std::int64_t>(std::floor(v0 * static_cast<double>(n)));
  const auto a_lo = std::max<std::int64_t>(0, a0 - half), a_hi = std::min<std::int64_t>(n - 1, a0 + half);
  const auto b_lo = std::max<std::int64_t>(0, b0 - half), b_hi = std::min<std::int64_t>(n - 1, b0 + half);

  buf.clear();
  for (auto a = a_lo; a <= a_hi; ++a) {
    const double du = (static_cast<double>(a) + 0.5) * step - u0;
    for (auto b = b_lo; b <= b_hi; ++b) {
      const double dv = (static_cast<double>(b) + 0.5) * step - v0;
      buf.push_back({du * du + dv * dv, static_cast<std::uint64_t>(a * n + b)});
    }
  }
  if (buf.size() < k) {
    // Only reachable when the window is clipped on a tiny grid; fall back to all points.
    buf.clear();
    for (std::int64_t a = 0; a < n; ++a) {
      const double du = (static_cast<double>(a) + 0.5) * step - u0;
      for (std::int64_t b = 0; b < n; ++b) {
        const double dv = (static_cast<double>(b) + 0.5) * step - v0;
        buf.push_back({du * du + dv * dv, static_cast<std::uint64_t>(a * n + b)});
      }
    }
  }
  const auto by_distance = [](const Candidate& x, const Candidate& y) {
    return x.dist2 < y.dist2 || (x.dist2 == y.dist2 && x.index < y.index);
  };
  std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(k - 1), buf.end(), by_distance);

  const double b_node = biomass::biomass(d0, h0);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto idx = buf[i].index;
    const auto a = static_cast<std::int64_t>(idx) / n;
    const auto b = static_cast<std::int64_t>(idx) % n;
    const double d = kDiameterRange.lo + (static_cast<double>(a) + 0.5) * step * kDiameterRange.width();
    const double h = kHeightRange.lo + (static_cast<double>(b) + 0.5) * step * kHeightRange.width();
    const auto [z_d, z_h] = dense_normals(key, idx);
    const double d_noisy = std::max(0.0, d * (1.0 + alpha * z_d));
    const double h_noisy = std::max(0.0, h * (1.0 + alpha * z_h));
    const double center = mc.centering == Centering::neighbour_truth ? biomass::biomass(d, h) : b_node;
    const double dev = biomass::biomass(d_noisy, h_noisy) - center;
    sum_sq += dev * dev;
  }
  return std::sqrt(sum_sq / static_cast<double>(k));
}

}  // namespace

double pooled_sigma_at(double d, double h, double alpha, const McConfig& mc, rand::Seed seed) {
  validate(mc);
  if (!(alpha >= 0.0)) throw ParameterError("noise level alpha must be non-negative");
  if (alpha == 0.0) return 0.0;
  std::vector<Candidate> buf;
  return pooled_at(d, h, alpha, mc, rand::derive(seed, "reference.dense").value, buf);
}

ReferenceSigmaTable pooled_sigma(double alpha, const McConfig& mc, rand::Seed seed) {
  validate(mc);
  if (!(alpha >= 0.0)) throw ParameterError("noise level alpha must be non-negative");
  ReferenceSigmaTable t;
  t.alpha = alpha;
  t.mc = mc;
  t.seed = seed;
  t.d_nodes = lattice_axis(kDiameterRange, mc.lattice_per_axis);
  t.h_nodes = lattice_axis(kHeightRange, mc.lattice_per_axis);
  t.sigma_raw.assign(t.node_count(), 0.0);
  if (alpha == 0.0) return t;

  const auto key = rand::derive(seed, "reference.dense").value;
  std::vector<Candidate> buf;
  for (std::size_t i = 0; i < t.d_nodes.size(); ++i) {
    for (std::size_t j = 0; j < t.h_nodes.size(); ++j) {
      t.sigma_raw[t.index(i, j)] = pooled_at(t.d_nodes[i], t.h_nodes[j], alpha, mc, key, buf);
    }
  }
  return t;
}

ReferenceSigmaTable smooth_sigma(ReferenceSigmaTable table) {
  if (table.sigma_raw.size() != table.node_count()) throw ShapeError("sigma_raw does not match the lattice");
  table.sigma_smoothed.assign(table.node_count(), 0.0);
  table.fit = {};

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < table.d_nodes.size(); ++i) {
    for (std::size_t j = 0; j < table.h_nodes.size(); ++j) {
      const double s = table.sigma_raw[table.index(i, j)];
      if (!(s > 0.0)) continue;
      const double d = table.d_nodes[i];
      const double x = std::log(d * d * table.h_nodes[j]);
      const double y = std::log(s);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++m;
    }
  }
  if (m < 2) return table;
  const double mean_x = sx / static_cast<double>(m);
  const double mean_y = sy / static_cast<double>(m);
  const double var_x = sxx / static_cast<double>(m) - mean_x * mean_x;
  if (!(var_x > 0.0)) return table;
  const double p = (sxy / static_cast<double>(m) - mean_x * mean_y) / var_x;
  table.fit = {std::exp(mean_y - p * mean_x), p};
  for (std::size_t i = 0; i < table.d_nodes.size(); ++i) {
    for (std::size_t j = 0; j < table.h_nodes.size(); ++j) {
      table.sigma_smoothed[table.index(i, j)] = table.fit(table.d_nodes[i], table.h_nodes[j]);
    }
  }
  return table;
}

double ReferenceSigmaTable::interpolate(double d, double h) const {
  const auto& values = sigma_smoothed.empty() ? sigma_raw : sigma_smoothed;
  const auto locate = [](const std::vector<double>& axis, double x, std::size_t& i, double& w) {
    x = std::clamp(x, axis.front(), axis.back());
    const double spacing = (axis.back() - axis.front()) / static_cast<double>(axis.size() - 1);
    i = std::min(static_cast<std::size_t>((x - axis.front()) / spacing), axis.size() - 2);
    w = (x - axis[i]) / (axis[i + 1] - axis[i]);
  };
  std::size_t i = 0, j = 0;
  double wd = 0.0, wh = 0.0;
  locate(d_nodes, d, i, wd);
  locate(h_nodes, h, j, wh);
  return (1 - wd) * (1 - wh) * values[index(i, j)] + wd * (1 - wh) * values[index(i + 1, j)] +
         (1 - wd) * wh * values[index(i, j + 1)] + wd * wh * values[index(i + 1, j + 1)];
}

double delta_method_sigma(double d, double h, double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("noise level alpha must be non-negative");
  return biomass::kAllometricExponent * alpha * std::sqrt(5.0) * biomass::biomass(d, h);
}

void write_csv(const ReferenceSigmaTable& t, const std::filesystem::path& path) {
  auto out = io::open_for_write(path);
  out << "d,h,sigma_raw,sigma_smoothed\n";
  for (std::size_t i = 0; i < t.d_nodes.size(); ++i) {
    for (std::size_t j = 0; j < t.h_nodes.size(); ++j) {
      const auto k = t.index(i, j);
      const double smoothed = t.sigma_smoothed.empty() ? 0.0 : t.sigma_smoothed[k];
      out << io::csv_line({io::fmt_double(t.d_nodes[i]), io::fmt_double(t.h_nodes[j]),
                           io::fmt_double(t.sigma_raw[k]), io::fmt_double(smoothed)});
    }
  }
}

void write_metadata(const ReferenceSigmaTable& t, const std::filesystem::path& path) {
  io::json j;
  j["alpha"] = t.alpha;
  j["mc_config"] = {{"dense_per_axis", t.mc.dense_per_axis},
                    {"k_neighbors", t.mc.k_neighbors},
                    {"lattice_per_axis", t.mc.lattice_per_axis},
                    {"centering", t.mc.centering == Centering::neighbour_truth ? "neighbour_truth" : "node_truth"}};
  j["fit"] = {{"family", "c*(d^2*h)^p"}, {"c", t.fit.c}, {"p", t.fit.p}};
  j["seed"] = t.seed.value;
  j["node_count"] = t.node_count();
  io::write_json(path, j);
}

ReferenceSigmaTable read_table(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) {
  const auto meta = io::read_json(json_path);
  ReferenceSigmaTable t;
  try {
    t.alpha = meta.at("alpha").get<double>();
    const auto& mc = meta.at("mc_config");
    t.mc.dense_per_axis = mc.at("dense_per_axis").get<std::int64_t>();
    t.mc.k_neighbors = mc.at("k_neighbors").get<int>();
    t.mc.lattice_per_axis = mc.at("lattice_per_axis").get<int>();
    t.mc.centering = mc.value("centering", "neighbour_truth") == "node_truth" ? Centering::node_truth
                                                                              : Centering::neighbour_truth;
    t.fit.c = meta.at("fit").at("c").get<double>();
    t.fit.p = meta.at("fit").at("p").get<double>();
    t.seed = rand::Seed{meta.at("seed").get<std::uint64_t>()};
  } catch (const io::json::exception& e) {
    throw IoError("bad reference metadata " + json_path.string() + ": " + e.what());
  }
  t.d_nodes = lattice_axis(kDiameterRange, t.mc.lattice_per_axis);
  t.h_nodes = lattice_axis(kHeightRange, t.mc.lattice_per_axis);
  const auto table = io::read_csv(csv_path);
  if (table.rows.size() != t.node_count()) throw IoError("reference table row count does not match lattice");
  const auto c_raw = table.column("sigma_raw"), c_s = table.column("sigma_smoothed");
  for (const auto& row : table.rows) {
    t.sigma_raw.push_back(io::parse_double(row[c_raw]));
    t.sigma_smoothed.push_back(io::parse_double(row[c_s]));
  }
  return t;
}

}  // namespace uqbench::reference
