#pragma once

#include <stdexcept>
#include <string>

namespace cesrnn {

// Base for every error raised by the library. The CLI maps the subclasses
// onto its exit-code contract.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data problems (missing files, bad CSV content, range violations).
class DataError : public Error {
public:
    using Error::Error;
};

class LoadError : public DataError {
public:
    using DataError::DataError;
};

class SchemaError : public DataError {
public:
    using DataError::DataError;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& file, std::size_t row, std::size_t column, const std::string& what)
        : DataError(file + ":" + std::to_string(row) + ":" + std::to_string(column) + ": " + what),
          row_(row), column_(column) {}

    std::size_t row() const { return row_; }
    std::size_t column() const { return column_; }

private:
    std::size_t row_;
    std::size_t column_;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite training loss. Carries the global update index at which it was seen.
class DivergenceError : public Error {
public:
    DivergenceError(int update, const std::string& what)
        : Error("training diverged at update " + std::to_string(update) + ": " + what), update_(update) {}

    int update() const { return update_; }

private:
    int update_;
};

} // namespace cesrnn
