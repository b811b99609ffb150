#pragma once

#include <stdexcept>
#include <string>

namespace lsirt {

/// Bad user-supplied configuration: geometry, grid, option values, presets.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mismatched shapes between volumes, sinograms, tensors, or geometry.
struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

/// Divergence, non-finite values, or a failed numerical fit.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File format or filesystem failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Misuse of an object's lifecycle (e.g. reusing a consumed autodiff tape).
struct InvalidStateError : std::logic_error {
    explicit InvalidStateError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace lsirt
