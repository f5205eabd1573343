#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace corrshift {

/// Base for every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Raised by autodiff misuse (non-scalar root, stale tape, missing grads).
class TapeError : public Error {
public:
    using Error::Error;
};

/// Cholesky breakdown. `minor()` is the 1-based order of the leading principal
/// minor that failed to be positive.
class FactorizationError : public Error {
public:
    FactorizationError(std::size_t minor, const std::string& what)
        : Error(what), minor_(minor) {}
    std::size_t minor() const noexcept { return minor_; }

private:
    std::size_t minor_;
};

class SpecError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable on-disk data (IDX, tensor files).
class FormatError : public Error {
public:
    using Error::Error;
};

/// A dataset or corpus file that should exist does not.
class MissingDataError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Invalid or unreadable experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace corrshift
