#pragma once

#include <stdexcept>
#include <string>

namespace fedss {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad dimensions, out-of-range hyperparameters,
/// inconsistent config blocks.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad runtime input such as a label outside [0, k).
class InputError : public Error {
public:
    using Error::Error;
};

/// Violation of the client/server message contract.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Outlier detector could not be fitted on the given points.
class FitError : public Error {
public:
    using Error::Error;
};

/// The SMO solver hit its iteration cap before reaching the KKT tolerance.
class ConvergenceError : public FitError {
public:
    ConvergenceError(const std::string& what, double violation)
        : FitError(what), violation_(violation) {}

    double violation() const noexcept { return violation_; }

private:
    double violation_;
};

}  // namespace fedss
