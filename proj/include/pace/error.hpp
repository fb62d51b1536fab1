#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pace {

/// Input rejected by a precondition check (bad direction, bad radius, ...).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Inconsistent or unsupported configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Physically invalid data (coincident atoms, unknown species, missing labels).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary container (checkpoint, dataset cache).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Text parse failure; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite values encountered during optimisation or integration.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pace
