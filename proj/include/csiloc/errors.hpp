#pragma once

#include <stdexcept>
#include <string>

namespace csiloc {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// ConfigError -> 2, data/format errors -> 3, NumericError -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid settings: bad ratios, infeasible layer chains, unusable flags.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Tensor/layer shape mismatches. Messages name expected vs actual extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Malformed files: bad magic, truncated payload, unparsable CSV rows.
class FormatError : public Error {
public:
    using Error::Error;
};

// Checkpoint manifest and serialized tensors disagree.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Degenerate metric inputs: empty sample set, zero coordinate range.
class DomainError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required (losses, gradients).
class NumericError : public Error {
public:
    using Error::Error;
};

// Operation called out of order, e.g. backward without a prior forward.
class StateError : public Error {
public:
    using Error::Error;
};

} // namespace csiloc
