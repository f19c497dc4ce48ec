#pragma once

#include <stdexcept>
#include <string>

namespace fqs {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An iterative optimizer failed to reach its tolerance.
class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, double residual)
      : std::runtime_error(what + " (last residual " + std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// An internal invariant was violated (bracketing bug, non-PSD matrix, ...).
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A Monte-Carlo run produced an unusable value.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fqs
