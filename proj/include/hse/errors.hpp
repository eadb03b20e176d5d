#pragma once

#include <stdexcept>
#include <string>

namespace hse {

// Exit codes used by the CLI: 0 ok, 1 usage, 2 data error, 3 numeric error.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension misuse. Mapped to exit code 3 by the CLI.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hse
