#pragma once

#include <stdexcept>
#include <string>

namespace lumisplit {

/// Base of all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument or violated precondition (maps to CLI exit code 2).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that must agree do not.
class ShapeError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Dataset or file content problem (exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Checkpoint missing, corrupt, or incompatible (exit code 4).
class CheckpointError : public Error {
public:
    using Error::Error;
};

}  // namespace lumisplit
