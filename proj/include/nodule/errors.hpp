#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace nodule {

/// Caller passed a value outside an operation's domain.
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Model or run configuration is inconsistent.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// File could not be read, written or parsed.
struct IoError : std::runtime_error {
    IoError(const std::filesystem::path& path, const std::string& what)
        : std::runtime_error(path.string() + ": " + what), path_(path) {}
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Input data cannot support the requested computation.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace nodule
