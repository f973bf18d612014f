#pragma once

#include <stdexcept>
#include <string>

namespace counts {

// Root of the library's exception hierarchy. `kind()` is a stable token used
// by the CLI to build machine-parseable error lines and exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "shape_mismatch"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invalid_config"; }
};

class FormatError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "bad_format"; }
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
    const char* kind() const noexcept override { return "unsupported_version"; }
};

class MissingFileError : public Error {
public:
    MissingFileError(const std::string& path, const std::string& what)
        : Error(what), path_(path) {}
    const char* kind() const noexcept override { return "missing_file"; }
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

// Raised when a loss, gradient or parameter becomes NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "non_finite"; }
};

}  // namespace counts
