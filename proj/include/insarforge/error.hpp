#pragma once

#include <stdexcept>
#include <string>

namespace insarforge {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration (CLI exit code 1).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Malformed, missing or mismatched input data (CLI exit code 2).
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: divergence, non-finite values, indefinite matrices (CLI exit code 3).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace insarforge
