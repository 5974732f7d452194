#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace spcnn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Out-of-domain scalar parameter (rate, slope, dof, alpha, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Inputs that are well-formed but unusable: empty classes, too few patches,
/// misaligned ids.
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data. Carries the byte offset where decoding stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

    /// Same error with `prefix` prepended to the message.
    static FormatError prefixed(const std::string& prefix, const FormatError& e) {
        return FormatError(prefix + e.what(), e.offset_, Prefixed{});
    }

private:
    struct Prefixed {};
    FormatError(const std::string& full, std::uint64_t offset, Prefixed) : Error(full), offset_(offset) {}

    std::uint64_t offset_;
};

class StatisticsError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Raised when results that must be scheduling-independent differ.
class DeterminismError : public Error {
public:
    using Error::Error;
};

/// Rethrows the exception currently being handled as the same spcnn error
/// type with `context` prepended to its message. Other exceptions are
/// rethrown unchanged. Must be called from inside a catch block.
[[noreturn]] void rethrow_with_context(const std::string& context);

}  // namespace spcnn
