#pragma once

#include <stdexcept>
#include <string>

namespace gext {

/// Invalid input: a violated precondition or invariant. The CLI maps it to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical or resource failure while running a valid request (exit code 2).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Circulant embedding stayed indefinite after the allowed padding doublings.
class EmbeddingError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

/// Covariance matrix is not positive semidefinite within tolerance.
class FactorizationError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

/// A grid or lattice exceeds its point budget.
class BudgetError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

/// A quadrature or lattice sum produced a non-finite value.
class NumericalError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace detail
}  // namespace gext
