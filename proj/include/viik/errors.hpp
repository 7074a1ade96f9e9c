#pragma once

#include <stdexcept>
#include <string>

namespace viik {

/// Bad arguments or malformed requests (CLI exit code 2).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure: non-finite values, shape violations, diverged solves (exit code 3).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File-format or filesystem failure (exit code 4).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace viik
