#pragma once

// Segmentation track: image corruption, toy scenes, and the reference
// aleatoric entropy of softmax probabilities computed from logit fields.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uqbench/randkit.hpp"

namespace uqbench::seg {

struct ImagePatch {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // row-major intensities
  std::vector<std::uint8_t> mask;    // row-major labels {0, 1}

  std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
  std::size_t size() const noexcept { return pixels.size(); }
};

/// Rounds and clamps an intensity to [0, 255].
std::uint8_t clamp_pixel(double value);

enum class CorruptionKind { gaussian, poisson, jitter };
std::string to_string(CorruptionKind kind);
CorruptionKind parse_corruption(const std::string& s);

struct CorruptionOptions {
  /// Subtract the Poisson mean 255 n so the level controls spread only.
  bool poisson_centered = true;
  /// Jitter draws rotation (degrees) and translation (pixels) with sd = jitter_scale * n.
  double jitter_scale = 25.0;
};

/// Noise kinds add per-pixel noise of scale 255 n; jitter resamples the patch
/// under a random rigid motion (bilinear, border-replicated) and moves the mask
/// with it. Level 0 returns the patch unchanged. Throws ParameterError on n < 0.
ImagePatch corrupt(const ImagePatch& patch, CorruptionKind kind, double n, rand::Seed seed,
                   const CorruptionOptions& options = {});

struct Rect {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open [y0, y1) x [x0, x1)
  int area() const noexcept { return (y1 - y0) * (x1 - x0); }
};

struct Scene {
  ImagePatch patch;
  std::vector<Rect> rects;
};

/// Bright axis-aligned rectangles on a darker textured background.
/// Throws ParameterError when size < 32 or n_rects < 0.
Scene toy_scene(rand::Seed seed, int size, int n_rects);

/// Logits of a (height x width) patch with `classes` channels, either as
/// R replicates or as (mean, variance) moments. Layout is (H, W, C, R).
struct LogitField {
  int height = 0;
  int width = 0;
  int classes = 0;
  int replicates = 0;          // 0 when the field holds moments
  std::vector<double> values;  // H*W*C*R replicate logits
  std::vector<double> mean;    // H*W*C moments
  std::vector<double> variance;

  static LogitField from_replicates(int height, int width, int classes, int replicates);
  static LogitField from_moments(int height, int width, int classes);

  std::size_t entry(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(classes) +
           static_cast<std::size_t>(c);
  }
  double& replicate(int y, int x, int c, int r) {
    return values[entry(y, x, c) * static_cast<std::size_t>(replicates) + static_cast<std::size_t>(r)];
  }
  double replicate(int y, int x, int c, int r) const {
    return values[entry(y, x, c) * static_cast<std::size_t>(replicates) + static_cast<std::size_t>(r)];
  }
  std::size_t entry_count() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(classes);
  }
  bool has_moments() const noexcept { return !mean.empty(); }
};

/// Per-entry mean and unbiased variance over the replicates. Requires R >= 2.
LogitField estimate_moments(const LogitField& replicates);

enum class EntropyEstimator {
  /// Shannon entropy of a fixed-bin histogram of sampled probabilities.
  histogram,
  /// Mean over samples of -p log p for each class.
  categorical,
};

struct EntropyConfig {
  int samples = 5000;
  int bins = 50;
  EntropyEstimator estimator = EntropyEstimator::histogram;
};

struct EntropyReport {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<double> per_pixel;  // H*W*C, nats
  double patch_value = 0.0;
};

/// Histogram entropy (nats) of probabilities in [0, 1] over `bins` equal bins.
double histogram_entropy(const std::vector<double>& probabilities, int bins);

/// Samples N logits per entry from the Gaussian moments, applies softmax, and
/// estimates the entropy of every class's probability samples. For two classes
/// the second histogram is the mirror image of the first, since p2 = 1 - p1.
/// Throws DomainError on negative variance and ParameterError when N < bins.
EntropyReport predicted_entropy(const LogitField& moments, const EntropyConfig& config, rand::Seed seed);

/// Estimates moments from the replicates and runs predicted_entropy.
/// Throws ParameterError when R < 2.
EntropyReport reference_entropy(const LogitField& replicates, const EntropyConfig& config, rand::Seed seed);

/// Raw float32 values in (H, W, C, R) order plus a JSON sidecar with dimensions.
/// Moment fields are written with R = 2 as (mean, variance) pairs.
void write_logit_field(const LogitField& field, const std::filesystem::path& bin_path,
                       const std::filesystem::path& json_path);
LogitField read_logit_field(const std::filesystem::path& bin_path, const std::filesystem::path& json_path);

// CSV columns: y,x,class,entropy; JSON: {"patch_value", "height", "width", "classes"}
void write_entropy_report(const EntropyReport& report, const std::filesystem::path& csv_path,
                          const std::filesystem::path& json_path);

}  // namespace uqbench::seg
