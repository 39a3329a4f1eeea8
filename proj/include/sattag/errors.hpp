#pragma once

#include <stdexcept>
#include <string>

namespace sattag {

// Base for every error raised by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid model / training / run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Well-formed file whose contents break the data contract (bad CSV cell,
// duplicate clip id, conflicting split lists).
class DataError : public IoError {
public:
    using IoError::IoError;
};

// NaN / Inf encountered where a finite value is required.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace sattag
