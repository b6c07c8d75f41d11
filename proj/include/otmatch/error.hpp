#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace otmatch {

// Base of every error the library throws. The CLI maps the subclasses
// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not agree (rows, columns, dimensions).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Parameter values outside the admissible domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed or non-finite input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Singular systems, failed factorizations, inadmissible numerical states.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// An iterative routine ran out of iterations. Carries the last iterate so
// callers can inspect where it stopped.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate)
      : NumericalError(what), last_iterate_(std::move(last_iterate)) {}

  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

 private:
  std::vector<double> last_iterate_;
};

}  // namespace otmatch
