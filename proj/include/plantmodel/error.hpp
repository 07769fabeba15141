#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace plantmodel {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (bad argument, bad config).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Text input could not be parsed; carries the 1-based line number.
class ParseError : public ValidationError {
public:
    ParseError(std::size_t line, const std::string& what)
        : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Structural problem in an AML document; names the offending element.
class SchemaError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
public:
    TrainingError(int epoch, const std::string& what)
        : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Rigid-transform estimation failed (degenerate geometry or no consensus).
class AlignmentError : public Error {
public:
    using Error::Error;
};

class RegistrationError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage is missing an upstream artifact or failed at run time.
class StageError : public Error {
public:
    using Error::Error;
};

}  // namespace plantmodel
