#pragma once

#include <stdexcept>
#include <string>

namespace remix {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape, range or precondition violation on caller-supplied data.
class InvalidInput : public Error {
public:
    using Error::Error;
};

// Canvas metadata does not describe its values.
class CorruptCanvas : public Error {
public:
    using Error::Error;
};

// A required checkpoint or prerequisite stage output is absent.
class MissingCheckpoint : public Error {
public:
    using Error::Error;
};

// Malformed or incompatible file (checkpoint, manifest, image).
class FormatError : public Error {
public:
    using Error::Error;
};

// Checkpoint written by a different format version.
class VersionMismatch : public FormatError {
public:
    using FormatError::FormatError;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace remix
