#pragma once

#include <stdexcept>
#include <string>

namespace advsim {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents do not agree with what an operation needs.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition on arguments was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An argument lies outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

// The L-BFGS attack produced a non-finite objective.
class OptimizationError : public Error {
 public:
  OptimizationError(const std::string& what, std::string trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::string& trace() const noexcept { return trace_; }

 private:
  std::string trace_;
};

// Destruction rate requested for a ledger with no digitally successful
// adversarial examples.
class NoValidAdversarialsError : public Error {
 public:
  using Error::Error;
};

// Relative detection rate requested against a zero reference rate.
class UndefinedRatioError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace advsim
