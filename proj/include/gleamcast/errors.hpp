#pragma once

#include <stdexcept>
#include <string>

namespace gleamcast {

/// Operand shapes are not conformable for an operation.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A precondition on arguments was violated.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A computation produced or received non-finite values.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input files are missing, malformed or incomplete.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gleamcast
