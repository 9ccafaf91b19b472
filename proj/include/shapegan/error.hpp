#pragma once

#include <stdexcept>
#include <string>

namespace shapegan {

// Each error category maps to one process exit code in the CLI.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

// Shape mismatch, invalid architecture, bad config key or value.
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

// API misuse: non-scalar backward, detached wrt, out-of-range alpha.
class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class IoError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

// Malformed file contents. Carries the byte offset where parsing failed.
class ParseError : public IoError {
public:
    ParseError(const std::string& what, std::size_t offset)
        : IoError(what + " (at byte " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::size_t offset_;
};

// NaN or Inf produced by a primitive.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

// A verification suite (gradient check) exceeded its tolerance.
class VerificationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 5; }
};

}  // namespace shapegan
