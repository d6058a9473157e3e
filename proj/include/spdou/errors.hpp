#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spdou {

/// Violated precondition on an operation's arguments.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Eigen-solver non-convergence, overflow, or another floating-point failure.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that should be SPD has an eigenvalue at or below the floor.
///
/// `value` is the offending eigenvalue, or for path-valued operations the
/// time parameter at which the cone was left (see `where`).
class BoundaryError : public std::runtime_error {
 public:
  BoundaryError(const std::string& what, double value)
      : std::runtime_error(what), value_(value) {}

  double value() const noexcept { return value_; }

 private:
  double value_;
};

/// Rejection sampler ran out of attempts.
class AttemptsExhausted : public std::runtime_error {
 public:
  AttemptsExhausted(const std::string& what, std::size_t attempts)
      : std::runtime_error(what), attempts_(attempts) {}

  std::size_t attempts() const noexcept { return attempts_; }

 private:
  std::size_t attempts_;
};

}  // namespace spdou
