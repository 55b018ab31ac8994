#pragma once

#include <stdexcept>
#include <string>

namespace snell {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the operation's domain (rank out of range,
/// negative scale, sparsity outside [0, 1], ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf showed up where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// backward() was called without a matching forward().
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace snell
