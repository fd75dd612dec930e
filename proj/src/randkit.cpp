#include "uqbench/randkit.hpp"

#include <cmath>

#include "uqbench/error.hpp"

namespace uqbench::rand {

namespace {

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

// Hörmann's transformed rejection with squeeze (PTRS), exact for lambda >= 10.
std::int64_t poisson_ptrs(Stream& rng, double lambda) noexcept {
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::fabs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -lambda + k * loglam - std::lgamma(k + 1.0)) {
      return static_cast<std::int64_t>(k);
    }
  }
}

}  // namespace

Seed derive(Seed root, std::string_view purpose, std::uint64_t index) noexcept {
  std::uint64_t h = mix64(root.value);
  h = mix64(h ^ fnv1a(purpose));
  h = mix64(h ^ mix64(index));
  return Seed{h};
}

Stream::Stream(Seed seed) noexcept {
  std::uint64_t x = seed.value;
  for (auto& word : s_) {
    x += 0x9e3779b97f4a7c15ULL;
    word = mix64(x);
  }
}

Stream::result_type Stream::operator()() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

std::uint64_t Stream::below(std::uint64_t n) noexcept {
  // Lemire's nearly-divisionless bounded draw.
  auto m = static_cast<unsigned __int128>((*this)()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>((*this)()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Stream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

double Stream::gamma(double shape) noexcept {
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  // Marsaglia & Tsang (2000).
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::int64_t Stream::poisson(double lambda) noexcept {
  if (lambda <= 0.0) return 0;
  if (lambda >= 10.0) return poisson_ptrs(*this, lambda);
  // Knuth's multiplication method.
  const double limit = std::exp(-lambda);
  std::int64_t k = 0;
  double prod = uniform();
  while (prod > limit) {
    ++k;
    prod *= uniform();
  }
  return k;
}

void GammaParams::validate() const {
  if (!(shape > 0.0) || !(scale > 0.0)) {
    throw ParameterError("gamma parameters require shape > 0 and scale > 0");
  }
}

double sample_gamma(Stream& rng, const GammaParams& params) {
  return params.location + params.scale * rng.gamma(params.shape);
}

std::vector<double> sample_gamma(const GammaParams& params, std::size_t n, Seed seed) {
  params.validate();
  Stream rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = sample_gamma(rng, params);
  return out;
}

std::vector<double> sample_gaussian(double mean, double stddev, std::size_t n, Seed seed) {
  if (!(stddev >= 0.0)) throw ParameterError("gaussian stddev must be non-negative");
  Stream rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = rng.normal(mean, stddev);
  return out;
}

std::vector<std::int64_t> sample_poisson(double lambda, std::size_t n, Seed seed) {
  if (!(lambda >= 0.0)) throw ParameterError("poisson lambda must be non-negative");
  Stream rng(seed);
  std::vector<std::int64_t> out(n);
  for (auto& k : out) k = rng.poisson(lambda);
  return out;
}

}  // namespace uqbench::rand
