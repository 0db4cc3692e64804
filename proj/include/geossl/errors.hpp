#pragma once

#include <stdexcept>
#include <string>

namespace geossl {

// Error categories the CLI maps to exit codes: config/validation -> 2,
// unreadable or inconsistent data -> 3, numerical abort -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace geossl
