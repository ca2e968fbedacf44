#pragma once

#include <stdexcept>
#include <string>

namespace spool {

// Error categories map to CLI exit codes (see tools/spoolnet.cpp):
// ConfigError -> 1, DataError -> 2, NumericError -> 3.
// Shape and contract violations inside kernels throw std::invalid_argument /
// std::domain_error and surface as config errors at the CLI boundary.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace spool
