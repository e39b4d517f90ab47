#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace agla {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform to an op's rule.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (non-scalar backward root, missing grad, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Task id supplied in class-IL mode or omitted in task-IL mode.
class ModeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Out-of-order tasks, unseen tasks, empty per-class memory and similar protocol violations.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// A scalar parameter is outside its valid range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Input transform applied outside its domain (e.g. invert on unscaled data).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Singular or non positive-definite matrix.
class LinearAlgebraError : public Error {
public:
    using Error::Error;
};

/// Malformed binary or text input. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Invalid experiment configuration (bad keys, missing paths).
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace agla
