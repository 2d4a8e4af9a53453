#pragma once

#include <stdexcept>
#include <string>

namespace cmb {

/// Base class for all errors raised by the library. The CLI maps each
/// subclass to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input to a numerical routine (non-finite values, wrong dimension,
/// point outside a function's domain).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A matrix factorization or inversion failed.
class FactorizationError : public Error {
public:
    using Error::Error;
};

/// A computation produced a non-finite or degenerate result.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed or missing input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace cmb
