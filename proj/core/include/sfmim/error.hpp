#pragma once

#include <stdexcept>
#include <string>

namespace sfmim {

// Error families map onto process exit codes in the CLI:
//   ConfigError -> 2, DataError/FormatError -> 3, TrainError/ContractError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration, flags, or unknown keys.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed file containers (NPY headers, checkpoint manifests, CSV).
struct FormatError : Error {
  using Error::Error;
};

// Structurally valid input whose content is unusable (non-finite values,
// out-of-range labels, empty classes, architecture mismatches).
struct DataError : Error {
  using Error::Error;
};

// Violated call contracts (shape mismatches, out-of-bounds centers,
// backward on a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

// Numeric failures during optimization (non-finite loss).
struct TrainError : Error {
  using Error::Error;
};

}  // namespace sfmim
