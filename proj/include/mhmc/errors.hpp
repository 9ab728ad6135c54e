#ifndef MHMC_ERRORS_HPP
#define MHMC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mhmc {

/// Cholesky pivot <= 0: the factored matrix is not (numerically) positive
/// definite.  Inside the sampler this signals a rank-deficient Gram matrix
/// and is converted into an integrator rejection; it is never "fixed" by
/// jitter, which would silently bias the target.
struct NotPositiveDefinite : std::runtime_error {
  explicit NotPositiveDefinite(const std::string& what)
      : std::runtime_error("not positive definite: " + what) {}
};

/// A diagonal block of a block-diagonal system is numerically singular.
struct SingularBlock : std::runtime_error {
  explicit SingularBlock(const std::string& what)
      : std::runtime_error("singular block: " + what) {}
};

/// The capacitance matrix of a Woodbury solve is numerically singular.
struct SingularCapacitance : std::runtime_error {
  explicit SingularCapacitance(const std::string& what)
      : std::runtime_error("singular capacitance: " + what) {}
};

/// A simulated state or constraint value became non-finite (model blow-up).
struct NonFiniteState : std::runtime_error {
  explicit NonFiniteState(const std::string& what)
      : std::runtime_error("non-finite state: " + what) {}
};

/// A derivative value became non-finite.
struct NonFiniteDerivative : std::runtime_error {
  explicit NonFiniteDerivative(const std::string& what)
      : std::runtime_error("non-finite derivative: " + what) {}
};

/// Observation noise scale is singular (baseline posterior undefined).
struct SingularNoiseScale : std::runtime_error {
  explicit SingularNoiseScale(const std::string& what)
      : std::runtime_error("singular noise scale: " + what) {}
};

/// Reason tags for integrator failures, used for failure attribution in
/// diagnostics.
enum class IntegratorErrorReason {
  NewtonNonConvergence,
  ReverseCheck,
  NonSpdGram,
  NonFinite,
};

inline const char* to_string(IntegratorErrorReason r) {
  switch (r) {
    case IntegratorErrorReason::NewtonNonConvergence:
      return "newton-nonconvergence";
    case IntegratorErrorReason::ReverseCheck:
      return "reverse-check";
    case IntegratorErrorReason::NonSpdGram:
      return "non-spd-gram";
    case IntegratorErrorReason::NonFinite:
      return "non-finite";
  }
  return "unknown";
}

/// Raised by the constrained integrator; the sampler converts it into a
/// rejection (static mode) or subtree termination (dynamic mode).
struct IntegratorError : std::runtime_error {
  IntegratorErrorReason reason;
  explicit IntegratorError(IntegratorErrorReason r)
      : std::runtime_error(std::string("integrator error: ") + to_string(r)),
        reason(r) {}
};

/// Initialisation failed after the configured number of restarts.
struct InitFailed : std::runtime_error {
  explicit InitFailed(const std::string& what)
      : std::runtime_error("initialisation failed: " + what) {}
};

/// A chain was started from a point that does not satisfy the constraint.
struct InitOffManifold : std::runtime_error {
  explicit InitOffManifold(const std::string& what)
      : std::runtime_error("initial point off manifold: " + what) {}
};

/// Per-time-index observation-consistency projection failed.
struct ProjectionFailed : std::runtime_error {
  explicit ProjectionFailed(const std::string& what)
      : std::runtime_error("projection failed: " + what) {}
};

/// Chains too short (or too few) for a diagnostic estimator.
struct TooShort : std::runtime_error {
  explicit TooShort(const std::string& what)
      : std::runtime_error("chains too short: " + what) {}
};

/// Configuration / CLI usage error.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what)
      : std::runtime_error("config error: " + what) {}
};

}  // namespace mhmc

#endif  // MHMC_ERRORS_HPP
