#pragma once

#include <stdexcept>
#include <string>

namespace perfaug {

/// Root of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, violated preconditions, out-of-range values.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Failure while doing otherwise-valid work (I/O, transport, divergence).
/// The CLI maps these to exit code 2.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

class ParseError : public ValidationError {
public:
    ParseError(const std::string& what, long location = -1)
        : ValidationError(location >= 0 ? what + " (at " + std::to_string(location) + ")" : what),
          location_(location) {}
    long location() const noexcept { return location_; }

private:
    long location_;
};

class SchemaError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ParameterError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A value outside its admissible range, with the offending cell.
class RangeError : public ValidationError {
public:
    RangeError(const std::string& what, long row, long col)
        : ValidationError(what + " at (" + std::to_string(row) + "," + std::to_string(col) + ")"),
          row_(row), col_(col) {}
    long row() const noexcept { return row_; }
    long col() const noexcept { return col_; }

private:
    long row_;
    long col_;
};

class ExtractionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class MigrationError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class TrainingError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class TransportError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class CredentialError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class IoError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

}  // namespace perfaug
