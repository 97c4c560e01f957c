#pragma once

#include <stdexcept>
#include <string>

namespace hjblab {

/// A numerical scheme failed to converge, blew up, or produced NaNs.
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The discretization lost monotonicity (a negative off-diagonal stencil
/// weight); the solver aborts rather than continue with a non-monotone scheme.
struct MonotonicityError : SolverError {
  using SolverError::SolverError;
};

/// Regression design matrix too ill-conditioned or under-sampled.
struct RegressionError : SolverError {
  using SolverError::SolverError;
};

/// Run configuration failed to parse or validate. `field` names the offender.
struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(const std::string& field_, const std::string& what_)
      : std::runtime_error(field_ + ": " + what_), field(field_) {}
};

}  // namespace hjblab
