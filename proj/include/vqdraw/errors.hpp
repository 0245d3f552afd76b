#pragma once

#include <stdexcept>
#include <string>

namespace vqdraw {

// Bad shapes, bad arguments, out-of-range indices.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed files: wrong magic, truncation, version mismatch.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vqdraw
