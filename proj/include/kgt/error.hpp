#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kgt {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An invalid configuration value (window, k, heads, h, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Internal bookkeeping of a compound value is inconsistent.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in the output of an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A softmax row had every entry masked out (empty neighbor set).
class DegenerateRowError : public Error {
 public:
  DegenerateRowError(std::size_t row)
      : Error("softmax row " + std::to_string(row) + " is fully masked"), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// The function under a gradient check returned a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Model input was rejected (e.g. non-finite pixels).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step)
      : Error("training diverged at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Generic file-system failure (open/read/write).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace kgt
