#pragma once

#include <stdexcept>
#include <string>

namespace lfc {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched shapes, invalid layer/network configuration, bad config files.
struct ConfigError : Error {
    using Error::Error;
};

// Structurally valid input that the operation cannot act on
// (empty batch, empty dataset, all-zero loss mask).
struct DegenerateInputError : Error {
    using Error::Error;
};

// API contract violations (backward without a recorded trace, double backward).
struct UsageError : Error {
    using Error::Error;
};

// Numeric preconditions violated (non-normalized probability maps, bad masks).
struct ValidationError : Error {
    using Error::Error;
};

// File format problems: bad magic, truncated payload, shape/header mismatch.
struct IoError : Error {
    using Error::Error;
};

// Refusal to clobber existing output.
struct FsConflictError : Error {
    using Error::Error;
};

// Non-finite values where the pipeline requires finite ones (divergence guard).
struct NumericError : Error {
    using Error::Error;
};

}  // namespace lfc
