#pragma once

#include <stdexcept>
#include <string>

namespace cellcount {

// Bad configuration values or unknown keys. The CLI maps this to exit code 2.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller misuse (empty inputs, missing arguments). Exit code 2.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Spatial shape does not satisfy a network or map contract.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Synthetic cell placement could not satisfy the spacing constraint.
struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Centroid annotation outside the image.
struct AnnotationError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Inconsistent training data (mismatched image/map shapes).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Loss became NaN or infinite during optimization.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed files on disk.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cellcount
