#pragma once

#include <stdexcept>
#include <string>

namespace lucca {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A matrix that must be positive definite failed its Cholesky factorization.
struct NotPositiveDefinite : Error {
    using Error::Error;
};

/// A calibration operation received no residuals to work with.
struct EmptyCalibrationSet : Error {
    using Error::Error;
};

/// A prediction region is unbounded (infinite scaling factor) and no finite
/// fallback is available.
struct UnboundedRegion : Error {
    using Error::Error;
};

/// Malformed config/model file. Carries the source location in the message.
struct ParseError : Error {
    using Error::Error;
};

/// Structurally valid input that violates a semantic invariant.
struct ValidationError : Error {
    using Error::Error;
};

}  // namespace lucca
