#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rdslab {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid numeric parameter (stable index, Poisson rate, dt, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Horizons that do not sit on the time grid.
class GridError : public Error {
public:
    using Error::Error;
};

/// A noise channel of the wrong kind was supplied.
class KindError : public Error {
public:
    using Error::Error;
};

/// Unknown system name, missing or unknown parameter.
class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// A system was evaluated without the auxiliary data it needs.
class StateError : public Error {
public:
    using Error::Error;
};

/// A non-finite state appeared during integration.
class BlowUpError : public Error {
public:
    BlowUpError(const std::string& what, std::int64_t index)
        : Error(what), index_(index) {}

    /// First grid index whose state is not finite.
    [[nodiscard]] std::int64_t index() const noexcept { return index_; }

private:
    std::int64_t index_;
};

/// Tangent frame collapsed during QR renormalization.
class DegeneracyError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Requested mesh exceeds the configured point budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Two grid-indexed objects do not share the same grid.
class AlignmentError : public Error {
public:
    using Error::Error;
};

class LengthError : public Error {
public:
    using Error::Error;
};

/// Malformed configuration text; carries the 1-based line number.
class ParseError : public Error {
public:
    /// line 0 means the text did not come from a file (command-line settings).
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    [[nodiscard]] int line() const noexcept { return line_; }

private:
    int line_;
};

}  // namespace rdslab
