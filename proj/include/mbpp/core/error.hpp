#pragma once

#include <stdexcept>
#include <string>

namespace mbpp {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid user-supplied specification or configuration. Maps to exit code 2
/// in the CLI.
struct ValidationError : Error {
    using Error::Error;
};

/// An architecture was asked to fuse an unsupported number of modalities.
struct ArityError : ValidationError {
    using ValidationError::ValidationError;
};

/// Tensor shape disagreement between producer and consumer.
struct ShapeError : Error {
    using Error::Error;
};

/// An API precondition was violated (e.g. select_cls on a sequence without a
/// classification token).
struct ContractError : Error {
    using Error::Error;
};

/// Failure while decoding an on-disk artifact.
struct ParseError : Error {
    enum class Kind { bad_magic, bad_version, truncated, malformed };

    ParseError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

/// Training aborted (NaN loss, empty split, ...).
struct TrainError : Error {
    using Error::Error;
};

/// Dempster combination was given two totally conflicting opinions.
struct ConflictError : Error {
    using Error::Error;
};

}  // namespace mbpp
