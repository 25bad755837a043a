#pragma once

#include <stdexcept>
#include <string>

namespace sled {

/// Contract violation: bad shapes, out-of-range indices, invalid arguments.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required, diverging losses, etc.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Corrupt or incompatible tensor archives.
struct ArchiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Unparseable or inconsistent run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace sled
