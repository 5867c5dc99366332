#pragma once

#include <stdexcept>
#include <string>

namespace roughflow {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operator contains NaN/Inf entries or has an inconsistent shape.
struct InvalidOperatorError : Error { using Error::Error; };

/// Spectral abscissa of the generator is not strictly negative.
struct StabilityError : Error { using Error::Error; };

/// A precondition on the inputs failed (asymmetric covariance, negative step, ...).
struct InputError : Error { using Error::Error; };

/// A generator assumption (decay / coercivity) is violated; message names the inequality.
struct AssumptionViolationError : Error { using Error::Error; };

/// Grids are not nested or do not match.
struct GridError : Error { using Error::Error; };

/// Dyadic refinement of a germ failed to contract (defect exponent <= 1).
struct SewingDivergenceError : Error { using Error::Error; };

/// Trajectory exceeded the blow-up threshold.
struct BlowUpError : Error {
    double time;
    explicit BlowUpError(double t, const std::string& what) : Error(what), time(t) {}
};

struct ConfigError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace roughflow
