#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace unite {

// Error categories map onto CLI exit codes: config 2, data 3, numerical 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Thrown by graph primitives whose operands violate the shape contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition (wrong arity, non-scalar output, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  explicit NotPositiveDefinite(std::size_t pivot)
      : NumericalError("not positive definite (failing pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

}  // namespace unite
