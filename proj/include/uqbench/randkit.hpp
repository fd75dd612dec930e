#pragma once

// Seeded random streams and the distributions the benchmarks draw from.
//
// All samplers draw from xoshiro256** directly; a given seed yields the
// same bits on every platform.

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace uqbench::rand {

struct Seed {
  std::uint64_t value = 0;

  friend bool operator==(Seed, Seed) = default;
};

/// SplitMix64 finalizer; also used for counter-based draws.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a root seed, a purpose tag and an index.
///
/// The scheme is: h = mix64(root), h = mix64(h ^ fnv1a(purpose)),
/// h = mix64(h ^ mix64(index)). Distinct (purpose, index) pairs give
/// statistically independent streams, and any sub-stream can be
/// regenerated without touching the others.
Seed derive(Seed root, std::string_view purpose, std::uint64_t index = 0) noexcept;

/// Maps 64 random bits to a double in the open interval (0, 1).
constexpr double to_unit_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// xoshiro256** generator with sampling helpers. Satisfies
/// UniformRandomBitGenerator.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(Seed seed) noexcept;
  Stream(Seed root, std::string_view purpose, std::uint64_t index = 0) noexcept
      : Stream(derive(root, purpose, index)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }
  result_type operator()() noexcept;

  /// Uniform on (0, 1).
  double uniform() noexcept { return to_unit_open((*this)()); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Standard normal (Marsaglia polar method, spare value cached).
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  /// Unit-scale Gamma(shape); shape must be positive.
  double gamma(double shape) noexcept;
  /// Exact Poisson draw; lambda must be non-negative.
  std::int64_t poisson(double lambda) noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// In-place Fisher-Yates shuffle driven by a Stream.
template <typename T>
void shuffle(std::vector<T>& v, Stream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

/// Three-parameter Gamma: X = location + scale * Gamma(shape).
struct GammaParams {
  double shape = 1.0;
  double location = 0.0;
  double scale = 1.0;

  double mean() const noexcept { return shape * scale + location; }
  double variance() const noexcept { return shape * scale * scale; }
  /// Throws ParameterError unless shape > 0 and scale > 0.
  void validate() const;
};

double sample_gamma(Stream& rng, const GammaParams& params);

std::vector<double> sample_gamma(const GammaParams& params, std::size_t n, Seed seed);
std::vector<double> sample_gaussian(double mean, double stddev, std::size_t n, Seed seed);
std::vector<std::int64_t> sample_poisson(double lambda, std::size_t n, Seed seed);

}  // namespace uqbench::rand
