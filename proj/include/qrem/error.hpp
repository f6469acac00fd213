#pragma once

#include <stdexcept>
#include <string>

namespace qrem {

/// Base of every error raised by the library. Callers that only need to
/// report failures can catch this; the subclasses carry the failure class.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Vector or permutation length does not match the operator dimension.
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A sampled landscape has a tied minimum (u0 == u1).
class DuplicateMinimum : public Error {
 public:
  using Error::Error;
};

/// Eigen-solver or propagator failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// A checked inequality that must hold for any correct computation failed.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration (maps to CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failure, always carrying the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace qrem
