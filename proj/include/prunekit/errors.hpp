#pragma once

#include <stdexcept>
#include <string>

namespace prunekit {

// Tensor dimension mismatches, or weights inconsistent with a ModelConfig.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid user input: bad token ids, malformed plans, out-of-range arguments.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File and serialization problems.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numeric invariant violations: non-finite values, degenerate norms.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace prunekit
