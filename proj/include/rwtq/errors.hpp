#pragma once

#include <stdexcept>
#include <string>

namespace rwtq {

// Bad user-supplied configuration (files, CLI flags, invalid settings).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent data (datasets, tables, serialized models).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A fitted density is nonpositive over an entire (s, a) slice, so it cannot
// be rescaled into a conditional distribution.
struct DegenerateDensityError : DataError {
  explicit DegenerateDensityError(const std::string& msg) : DataError(msg) {}
};

}  // namespace rwtq
