#pragma once

#include <stdexcept>
#include <string>

namespace rtd {

/// Thrown when a four-vector fails a causal-structure precondition,
/// e.g. asking for the rest frame of a spacelike or past-pointing vector.
struct FrameError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when a constructed object fails one of its declared validity
/// checks (symmetry, positivity, normalization, ...). The message names
/// the check that failed and the offending magnitude.
struct InvariantViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when an iterative procedure (quadrature, fit, time march)
/// cannot reach its requested tolerance.
struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown for malformed or inconsistent configuration input.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace rtd
