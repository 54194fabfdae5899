#pragma once

#include <stdexcept>
#include <string>

namespace cafe {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input shapes or lengths do not line up.
struct DimensionError : Error {
    using Error::Error;
};

// A NaN/Inf appeared where a finite value is required.
struct NumericError : Error {
    using Error::Error;
};

// Invalid configuration or parameters.
struct ConfigError : Error {
    using Error::Error;
};

// Operation requested beyond a documented capability limit.
struct CapabilityError : Error {
    using Error::Error;
};

// A metric is undefined for the given inputs.
struct MetricError : Error {
    using Error::Error;
};

// Filesystem / parsing failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace cafe
