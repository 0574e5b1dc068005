#pragma once

#include <stdexcept>
#include <string>

namespace latentid {

/// Base class for all toolkit errors. Subcommands map these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed record in a trace file; carries the 1-based line number.
class SchemaError : public Error {
public:
    SchemaError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InvariantError : public Error {
public:
    using Error::Error;
};

class ParamError : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class EmptyCell : public Error {
public:
    using Error::Error;
};

class MissingScore : public Error {
public:
    using Error::Error;
};

class TooFewRows : public Error {
public:
    using Error::Error;
};

class TooFewClasses : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class EmptyTestSet : public Error {
public:
    using Error::Error;
};

class BadSubset : public Error {
public:
    using Error::Error;
};

} // namespace latentid
