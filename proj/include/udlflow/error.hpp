#pragma once

#include <stdexcept>
#include <string>

namespace udlflow {

// Base for every error the library raises. The subclasses only exist so that
// callers (and the CLI exit-code mapping) can tell the categories apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// Violated precondition of an operation.
class ContractError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class SchemaError : public FormatError {
public:
    using FormatError::FormatError;
};

class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace udlflow
