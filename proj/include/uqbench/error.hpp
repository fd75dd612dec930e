#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uqbench {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid distribution or method parameter (negative stddev, T < 2, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix dimensions that do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (k larger than the sample pool, unknown key, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset generation produced nothing usable.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for its input (constant reference, zero mean).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written, or had the wrong layout.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace uqbench
