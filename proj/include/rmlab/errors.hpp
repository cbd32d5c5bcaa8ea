#pragma once

#include <stdexcept>
#include <string>

namespace rmlab {

// Invalid configuration or malformed arguments. CLI maps this to exit code 2.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical blow-up at runtime (non-finite loss or activations). Exit code 3.
struct divergence_error : std::runtime_error {
    explicit divergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A required input file or directory does not exist. Exit code 4.
struct missing_artifact_error : std::runtime_error {
    explicit missing_artifact_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input is structurally valid but degenerate for the requested statistic
// (e.g. a rank correlation over a constant vector).
struct degenerate_input_error : std::runtime_error {
    explicit degenerate_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Corrupt or incompatible serialized artifact (bad magic, version, or truncation).
struct format_error : std::runtime_error {
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rmlab
