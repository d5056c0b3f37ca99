#pragma once

#include <stdexcept>
#include <string>

namespace r2sl {

// Exit-code mapping: UsageError -> 1, DataError -> 2, NumericalError -> 3.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace r2sl
