#pragma once

#include <stdexcept>
#include <string>

namespace morphenkf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input configuration, shapes, or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure could not produce a valid result
/// (non-invertible warp, non-finite model state, exhausted retries).
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace morphenkf
