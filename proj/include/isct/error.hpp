#pragma once

#include <stdexcept>
#include <string>

namespace isct {

/// Base of every error raised by the toolkit. Each subclass names one
/// failure category so callers (and the CLI exit-code mapping) can
/// dispatch on type.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ResourceLimitError : public Error {
public:
    using Error::Error;
};

class SingularSystemError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public IoError {
public:
    using IoError::IoError;
};

class CorruptFileError : public IoError {
public:
    using IoError::IoError;
};

class VersionMismatchError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace isct
