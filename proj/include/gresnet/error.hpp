#pragma once

#include <stdexcept>
#include <string>

namespace gresnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not conform.
struct ShapeError : Error {
  using Error::Error;
};

/// Invalid graph construction input or a graph that violates an operator's
/// structural requirement (isolated node, disconnected, periodic).
struct GraphError : Error {
  using Error::Error;
};

/// A documented precondition on numeric input was not met.
struct PreconditionError : Error {
  using Error::Error;
};

/// Malformed or inconsistent dataset files.
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace gresnet
