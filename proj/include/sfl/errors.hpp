#pragma once

#include <stdexcept>
#include <string>

namespace sfl {

// Base of every error raised by the library. Subclasses map onto distinct
// failure categories so that callers (the CLI in particular) can translate
// them into stable exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Extents that do not agree (matmul inner dims, feature widths, batch shapes).
class DimensionError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

class NotPositiveDefiniteError : public Error {
public:
    using Error::Error;
};

// Configuration is syntactically or semantically invalid.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A model and a dataset disagree (e.g. class counts).
class MismatchError : public Error {
public:
    using Error::Error;
};

// Persistence failures. All derive from ArtifactError so "corrupt artifact"
// can be caught as one category.
class ArtifactError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public ArtifactError {
public:
    using ArtifactError::ArtifactError;
};

class VersionError : public ArtifactError {
public:
    using ArtifactError::ArtifactError;
};

class ChecksumError : public ArtifactError {
public:
    using ArtifactError::ArtifactError;
};

class InvariantError : public ArtifactError {
public:
    using ArtifactError::ArtifactError;
};

}  // namespace sfl
