#pragma once

#include <memory>
#include <stdexcept>
#include <string>

namespace opsplit {

struct Trajectory;

/// Base class for every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar parameter is outside its admissible range (nonpositive step, relaxation out of bounds, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A theorem hypothesis or flow-spec invariant does not hold (e.g. a schedule leaves its declared bounds).
class HypothesisError : public Error {
 public:
  using Error::Error;
};

/// An oracle was evaluated outside its domain (e.g. vanishing damping at t <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An inner iterative solver hit its iteration cap.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double best_residual)
      : Error(what + " (best residual " + std::to_string(best_residual) + ")"),
        residual_(best_residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// A rate or exponent fit could not be carried out on the supplied data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration could not be parsed or validated.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The integrator produced a non-finite or exploding state. Carries the last finite time
/// and the trajectory recorded up to that point.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double last_finite_time,
                  std::shared_ptr<const Trajectory> partial)
      : Error(what), last_finite_time_(last_finite_time), partial_(std::move(partial)) {}

  double last_finite_time() const noexcept { return last_finite_time_; }
  const std::shared_ptr<const Trajectory>& partial() const noexcept { return partial_; }

 private:
  double last_finite_time_;
  std::shared_ptr<const Trajectory> partial_;
};

}  // namespace opsplit
