#pragma once

#include <stdexcept>
#include <string>

namespace seq2bf {

// Bad configuration or unusable input files.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed data encountered at runtime (corpus lines, ids, checkpoints).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated structural precondition (e.g. empty phrase).
struct ConstraintError : std::runtime_error {
    explicit ConstraintError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace seq2bf
