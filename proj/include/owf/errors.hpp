#pragma once

#include <stdexcept>
#include <string>

namespace owf {

/// Input rejected before any computation (dimension mismatch, non-finite entries, bad ranges).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A Jacobian determinant (or a Jacobian-vector norm) collapsed to zero.
class SingularJacobian : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A loss or gradient left the finite reals during optimization.
class TrainingPathology : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unreadable checkpoint document.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require(bool condition, const std::string& message)
{
    if (!condition) throw InvalidInput(message);
}

}  // namespace detail
}  // namespace owf
