#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sysrisk {

/// Base class for every error raised by the library. `kind()` is a stable,
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain_error", what) {}
};

/// Iterative routine failed to reach its tolerance.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical_error", what) {}
};

/// Input data violates a structural invariant (liability matrix, config).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("validation_error", what) {}
};

/// Matrix factorisation failed (e.g. correlation not positive semidefinite).
class MatrixError : public Error {
 public:
  explicit MatrixError(const std::string& what) : Error("matrix_error", what) {}
};

/// Picard clearing ran out of iterations; carries the last iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate)
      : Error("convergence_error", what), last_iterate_(std::move(last_iterate)) {}

  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }

 private:
  std::vector<double> last_iterate_;
};

/// A set-valued algorithm was called outside its precondition
/// (all-eligible system unacceptable, monetary box too small, grid too coarse).
class AlgorithmError : public Error {
 public:
  AlgorithmError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

}  // namespace sysrisk
