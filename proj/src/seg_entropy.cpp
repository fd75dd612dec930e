#include "uqbench/seg_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::seg {

std::uint8_t clamp_pixel(double value) {
  return static_cast<std::uint8_t>(std::clamp(std::round(value), 0.0, 255.0));
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian: return "gaussian";
    case CorruptionKind::poisson: return "poisson";
    case CorruptionKind::jitter: return "jitter";
  }
  return "unknown";
}

CorruptionKind parse_corruption(const std::string& s) {
  if (s == "gaussian") return CorruptionKind::gaussian;
  if (s == "poisson") return CorruptionKind::poisson;
  if (s == "jitter") return CorruptionKind::jitter;
  throw ConfigError("unknown corruption kind '" + s + "'");
}

namespace {

double bilinear(const ImagePatch& p, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(p.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(p.width - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, p.height - 1), x1 = std::min(x0 + 1, p.width - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) + fy * ((1 - fx) * p.at(y1, x0) + fx * p.at(y1, x1));
}

ImagePatch jitter(const ImagePatch& patch, double sd, rand::Stream& rng) {
  const double theta = rng.normal(0.0, sd) * std::numbers::pi / 180.0;
  const double ty = rng.normal(0.0, sd), tx = rng.normal(0.0, sd);
  const double cy = 0.5 * (patch.height - 1), cx = 0.5 * (patch.width - 1);
  const double c = std::cos(theta), s = std::sin(theta);
  ImagePatch out = patch;
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) {
      // Inverse map of rotate-about-centre followed by translation.
      const double dy = y - cy - ty, dx = x - cx - tx;
      const double sy = cy + c * dy - s * dx;
      const double sx = cx + s * dy + c * dx;
      const auto i = static_cast<std::size_t>(y * patch.width + x);
      out.pixels[i] = clamp_pixel(bilinear(patch, sy, sx));
      if (!patch.mask.empty()) {
        const int my = std::clamp(static_cast<int>(std::lround(sy)), 0, patch.height - 1);
        const int mx = std::clamp(static_cast<int>(std::lround(sx)), 0, patch.width - 1);
        out.mask[i] = patch.mask[static_cast<std::size_t>(my * patch.width + mx)];
      }
    }
  }
  return out;
}

}  // namespace

ImagePatch corrupt(const ImagePatch& patch, CorruptionKind kind, double n, rand::Seed seed,
                   const CorruptionOptions& options) {
  if (!(n >= 0.0)) throw ParameterError("corruption level must be non-negative");
  if (n == 0.0) return patch;
  rand::Stream rng(seed, "seg.corrupt");
  if (kind == CorruptionKind::jitter) return jitter(patch, options.jitter_scale * n, rng);
  ImagePatch out = patch;
  const double scale = 255.0 * n;
  for (auto& px : out.pixels) {
    double eps;
    if (kind == CorruptionKind::gaussian) {
      eps = rng.normal(0.0, scale);
    } else {
      eps = static_cast<double>(rng.poisson(scale));
      if (options.poisson_centered) eps -= scale;
    }
    px = clamp_pixel(px + eps);
  }
  return out;
}

Scene toy_scene(rand::Seed seed, int size, int n_rects) {
  if (size < 32) throw ParameterError("scene size must be at least 32");
  if (n_rects < 0) throw ParameterError("rectangle count must be non-negative");
  Scene scene;
  auto& p = scene.patch;
  p.height = p.width = size;
  p.pixels.assign(static_cast<std::size_t>(size * size), 0);
  p.mask.assign(p.pixels.size(), 0);

  rand::Stream tex(seed, "scene.texture");
  const double fy = 0.15 + 0.2 * tex.uniform(), fx = 0.15 + 0.2 * tex.uniform();
  const double phase = 2.0 * std::numbers::pi * tex.uniform();
  std::vector<double> value(p.pixels.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      value[static_cast<std::size_t>(y * size + x)] =
          90.0 + 12.0 * std::sin(fy * y + phase) * std::cos(fx * x) + tex.normal(0.0, 6.0);
    }
  }

  rand::Stream geo(seed, "scene.rects");
  const int lo = std::max(4, size / 8), hi = std::max(lo + 1, size / 3);
  for (int r = 0; r < n_rects; ++r) {
    const int h = lo + static_cast<int>(geo.below(static_cast<std::uint64_t>(hi - lo + 1)));
    const int w = lo + static_cast<int>(geo.below(static_cast<std::uint64_t>(hi - lo + 1)));
    const int y0 = static_cast<int>(geo.below(static_cast<std::uint64_t>(size - h + 1)));
    const int x0 = static_cast<int>(geo.below(static_cast<std::uint64_t>(size - w + 1)));
    const double brightness = 130.0 + 40.0 * geo.uniform();
    scene.rects.push_back({y0, x0, y0 + h, x0 + w});
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) {
        const auto i = static_cast<std::size_t>(y * size + x);
        value[i] = brightness + geo.normal(0.0, 6.0);
        p.mask[i] = 1;
      }
    }
  }
  for (std::size_t i = 0; i < value.size(); ++i) p.pixels[i] = clamp_pixel(value[i]);
  return scene;
}

LogitField LogitField::from_replicates(int height, int width, int classes, int replicates) {
  if (height < 1 || width < 1 || classes < 1 || replicates < 1) throw ShapeError("logit field dimensions must be positive");
  LogitField f;
  f.height = height;
  f.width = width;
  f.classes = classes;
  f.replicates = replicates;
  f.values.assign(f.entry_count() * static_cast<std::size_t>(replicates), 0.0);
  return f;
}

LogitField LogitField::from_moments(int height, int width, int classes) {
  if (height < 1 || width < 1 || classes < 1) throw ShapeError("logit field dimensions must be positive");
  LogitField f;
  f.height = height;
  f.width = width;
  f.classes = classes;
  f.mean.assign(f.entry_count(), 0.0);
  f.variance.assign(f.entry_count(), 0.0);
  return f;
}

LogitField estimate_moments(const LogitField& rep) {
  if (rep.replicates < 2) throw ParameterError("at least two replicates are required");
  auto out = LogitField::from_moments(rep.height, rep.width, rep.classes);
  const auto R = static_cast<std::size_t>(rep.replicates);
  for (std::size_t e = 0; e < rep.entry_count(); ++e) {
    const double* v = rep.values.data() + e * R;
    // Shifted by the first replicate: identical replicates give exactly zero variance.
    double shift = 0.0;
    for (std::size_t r = 0; r < R; ++r) shift += v[r] - v[0];
    shift /= static_cast<double>(R);
    double ss = 0.0;
    for (std::size_t r = 0; r < R; ++r) ss += (v[r] - v[0] - shift) * (v[r] - v[0] - shift);
    out.mean[e] = v[0] + shift;
    out.variance[e] = ss / static_cast<double>(R - 1);
  }
  return out;
}

namespace {

int bin_of(double p, int bins) {
  return std::clamp(static_cast<int>(p * bins), 0, bins - 1);
}

double counts_entropy(const std::vector<int>& counts, int total) {
  double h = 0.0;
  for (const int c : counts) {
    if (c == 0) continue;
    const double q = static_cast<double>(c) / total;
    h -= q * std::log(q);
  }
  return h;
}

}  // namespace

double histogram_entropy(const std::vector<double>& probabilities, int bins) {
  if (bins < 1) throw ParameterError("bin count must be positive");
  if (probabilities.empty()) throw ParameterError("no probability samples");
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (const double p : probabilities) ++counts[static_cast<std::size_t>(bin_of(p, bins))];
  return counts_entropy(counts, static_cast<int>(probabilities.size()));
}

EntropyReport predicted_entropy(const LogitField& f, const EntropyConfig& config, rand::Seed seed) {
  if (!f.has_moments()) throw ParameterError("logit field has no moments");
  if (config.bins < 1) throw ParameterError("bin count must be positive");
  if (config.samples < config.bins) throw ParameterError("sample count must be at least the bin count");
  for (const double v : f.variance) {
    if (!(v >= 0.0)) throw DomainError("logit variance must be non-negative");
  }
  const int C = f.classes, N = config.samples, B = config.bins;
  EntropyReport report{f.height, f.width, C, std::vector<double>(f.entry_count(), 0.0), 0.0};

  std::vector<double> z(static_cast<std::size_t>(C)), sd(static_cast<std::size_t>(C));
  std::vector<std::vector<int>> counts(static_cast<std::size_t>(C), std::vector<int>(static_cast<std::size_t>(B)));
  std::vector<double> categorical(static_cast<std::size_t>(C));
  const auto pixels = static_cast<std::uint64_t>(f.height) * static_cast<std::uint64_t>(f.width);
  for (std::uint64_t px = 0; px < pixels; ++px) {
    const std::size_t base = px * static_cast<std::size_t>(C);
    bool deterministic = true;
    for (int c = 0; c < C; ++c) {
      sd[static_cast<std::size_t>(c)] = std::sqrt(f.variance[base + static_cast<std::size_t>(c)]);
      deterministic = deterministic && sd[static_cast<std::size_t>(c)] == 0.0;
    }
    // A point mass fills one histogram bin; its categorical entropy is evaluated once.
    const int draws = deterministic ? 1 : N;
    rand::Stream rng(seed, "entropy.pixel", px);
    for (auto& h : counts) std::fill(h.begin(), h.end(), 0);
    std::fill(categorical.begin(), categorical.end(), 0.0);
    const bool binary_histogram = C == 2 && config.estimator == EntropyEstimator::histogram;
    int binary_draws = draws;
    if (binary_histogram && !deterministic) {
      // When +-9 sd of the logit gap maps into a single bin every draw lands
      // there (miss probability ~1e-19 per draw), so one draw suffices.
      const double gap = f.mean[base] - f.mean[base + 1];
      const double spread = 9.0 * std::hypot(sd[0], sd[1]);
      const auto p0 = [](double g) { return 1.0 / (1.0 + std::exp(-g)); };
      if (bin_of(p0(gap - spread), B) == bin_of(p0(gap + spread), B)) binary_draws = 1;
    }
    for (int n = 0; binary_histogram && n < binary_draws; ++n) {
      const double z0 = f.mean[base] + (deterministic ? 0.0 : sd[0] * rng.normal());
      const double z1 = f.mean[base + 1] + (deterministic ? 0.0 : sd[1] * rng.normal());
      ++counts[0][static_cast<std::size_t>(bin_of(1.0 / (1.0 + std::exp(z1 - z0)), B))];
    }
    for (int n = 0; !binary_histogram && n < draws; ++n) {
      double zmax = -INFINITY;
      for (int c = 0; c < C; ++c) {
        const auto k = static_cast<std::size_t>(c);
        z[k] = f.mean[base + k] + (deterministic ? 0.0 : sd[k] * rng.normal());
        zmax = std::max(zmax, z[k]);
      }
      double total = 0.0;
      for (auto& v : z) total += (v = std::exp(v - zmax));
      for (int c = 0; c < C; ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double p = z[k] / total;
        if (config.estimator == EntropyEstimator::histogram) {
          ++counts[k][static_cast<std::size_t>(bin_of(p, B))];
        } else if (p > 0.0) {
          categorical[k] -= p * std::log(p);
        }
      }
    }
    if (binary_histogram) {
      // p2 = 1 - p1 exactly: the second histogram mirrors the first.
      std::reverse_copy(counts[0].begin(), counts[0].end(), counts[1].begin());
    }
    for (int c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      report.per_pixel[base + k] = config.estimator == EntropyEstimator::histogram
                                       ? counts_entropy(counts[k], binary_histogram ? binary_draws : draws)
                                       : categorical[k] / static_cast<double>(draws);
    }
  }
  double sum = 0.0;
  for (const double v : report.per_pixel) sum += v;
  report.patch_value = sum / static_cast<double>(report.per_pixel.size());
  return report;
}

EntropyReport reference_entropy(const LogitField& replicates, const EntropyConfig& config, rand::Seed seed) {
  if (replicates.replicates < 2) throw ParameterError("at least two replicates are required");
  return predicted_entropy(estimate_moments(replicates), config, seed);
}

void write_logit_field(const LogitField& field, const std::filesystem::path& bin_path,
                       const std::filesystem::path& json_path) {
  auto out = io::open_for_write(bin_path, true);
  const bool moments = field.has_moments();
  const int R = moments ? 2 : field.replicates;
  for (std::size_t e = 0; e < field.entry_count(); ++e) {
    for (int r = 0; r < R; ++r) {
      const double v = moments ? (r == 0 ? field.mean[e] : field.variance[e])
                               : field.values[e * static_cast<std::size_t>(R) + static_cast<std::size_t>(r)];
      const auto f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  if (!out) throw IoError("failed writing " + bin_path.string());
  io::json j;
  j["H"] = field.height;
  j["W"] = field.width;
  j["C"] = field.classes;
  j["R"] = R;
  j["layout"] = "H,W,C,R";
  j["dtype"] = "float32";
  j["kind"] = moments ? "moments" : "replicates";
  io::write_json(json_path, j);
}

LogitField read_logit_field(const std::filesystem::path& bin_path, const std::filesystem::path& json_path) {
  const auto j = io::read_json(json_path);
  LogitField f;
  bool moments = false;
  int R = 0;
  try {
    moments = j.at("kind").get<std::string>() == "moments";
    R = j.at("R").get<int>();
    f = moments ? LogitField::from_moments(j.at("H"), j.at("W"), j.at("C"))
                : LogitField::from_replicates(j.at("H"), j.at("W"), j.at("C"), R);
  } catch (const io::json::exception& e) {
    throw IoError("bad logit sidecar " + json_path.string() + ": " + e.what());
  }
  std::ifstream in(bin_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + bin_path.string());
  for (std::size_t e = 0; e < f.entry_count(); ++e) {
    for (int r = 0; r < R; ++r) {
      float v = 0.0f;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated logit file " + bin_path.string());
      if (moments) {
        (r == 0 ? f.mean : f.variance)[e] = v;
      } else {
        f.values[e * static_cast<std::size_t>(R) + static_cast<std::size_t>(r)] = v;
      }
    }
  }
  return f;
}

void write_entropy_report(const EntropyReport& report, const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path) {
  auto out = io::open_for_write(csv_path);
  out << "y,x,class,entropy\n";
  for (int y = 0; y < report.height; ++y) {
    for (int x = 0; x < report.width; ++x) {
      for (int c = 0; c < report.classes; ++c) {
        const auto e = (static_cast<std::size_t>(y) * static_cast<std::size_t>(report.width) +
                        static_cast<std::size_t>(x)) * static_cast<std::size_t>(report.classes) +
                       static_cast<std::size_t>(c);
        out << io::csv_line({std::to_string(y), std::to_string(x), std::to_string(c), io::fmt_double(report.per_pixel[e])});
      }
    }
  }
  io::write_json(json_path, {{"patch_value", report.patch_value},
                             {"height", report.height},
                             {"width", report.width},
                             {"classes", report.classes}});
}

}  // namespace uqbench::seg
