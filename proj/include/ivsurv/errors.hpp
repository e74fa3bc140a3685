#pragma once

#include <stdexcept>
#include <string>

namespace ivsurv {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unusable input data (CLI exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Estimation failed (CLI exit code 4).
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// Model fitting did not converge (diverging coefficients, separation,
/// monotone likelihood, or iteration limit).
class ConvergenceError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

/// The instrument-treatment contrast fell below the denominator floor.
class WeakInstrumentError : public EstimationError {
 public:
  WeakInstrumentError(const std::string& msg, std::ptrdiff_t subject)
      : EstimationError(msg), subject_index(subject) {}
  std::ptrdiff_t subject_index = -1;
};

}  // namespace ivsurv
