#pragma once

#include <stdexcept>
#include <string>

namespace scribbleseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied an argument that violates a documented precondition
/// (shape mismatch, bad box, unknown option). The CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Spatial dimensions that the encoder cannot consume (not a multiple of 32).
class SizingError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A file is missing, undecodable or holds illegal values.
class DataError : public Error {
public:
    using Error::Error;
};

/// A guided segmenter backend could not be created or failed at runtime.
class BackendError : public Error {
public:
    using Error::Error;
};

}  // namespace scribbleseg
