#pragma once

#include <stdexcept>
#include <string>

namespace pointseq {

// Error taxonomy mirrored by the CLI exit codes: config -> 2, io -> 3,
// numeric -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FileVersionError : IoError {
    explicit FileVersionError(const std::string& msg) : IoError(msg) {}
};

struct FileTruncatedError : IoError {
    explicit FileTruncatedError(const std::string& msg) : IoError(msg) {}
};

struct FileChecksumError : IoError {
    explicit FileChecksumError(const std::string& msg) : IoError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scene generation could not satisfy the placement constraints.
struct PlacementError : ConfigError {
    explicit PlacementError(const std::string& msg) : ConfigError(msg) {}
};

} // namespace pointseq
