#pragma once

#include <stdexcept>
#include <string>

namespace hypdiag {

/// Malformed or unreadable input (config, CSV, kernel file).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent matrix or grid dimensions.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structural assumption or precondition violated (T <= T0, CFL, rank ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical stage failed: non-convergence, singular Gramian, blow-up.
class SolverError : public std::runtime_error {
 public:
  SolverError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace hypdiag
