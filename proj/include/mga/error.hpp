#pragma once

#include <stdexcept>
#include <string>

namespace mga {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid model or run configuration (bad ratio, too few frames, unknown key).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. swapped motion directions or mismatched frame counts.
class UsageError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf appeared in a forward value or loss.
class NumericError : public Error {
public:
    using Error::Error;
};

/// The dataset cannot satisfy a sampling request.
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed feature file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// A run artifact that a command depends on is absent.
class MissingArtifactError : public Error {
public:
    using Error::Error;
};

} // namespace mga
