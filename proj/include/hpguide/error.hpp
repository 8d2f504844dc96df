#pragma once

#include <stdexcept>
#include <string>

namespace hpguide {

// Input that violates a documented contract (schema, bounds, preconditions).
// The CLI maps this family to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Not enough usable trials for the requested analysis.
class InsufficientDataError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// R^2 is undefined when the reference targets have zero variance.
class UndefinedRSquaredError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace hpguide
