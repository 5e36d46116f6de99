#pragma once

#include <stdexcept>
#include <string>

namespace ptq {

// Base of every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension mismatch or invalid group partitioning.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, recipe composition, or parameter value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, failed factorization, non-finite objective.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object missing required state (no activations, no Hessian).
class StateError : public Error {
 public:
  using Error::Error;
};

// Unreadable or too-short input data.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace ptq
