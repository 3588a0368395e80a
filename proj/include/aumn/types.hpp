#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>

namespace aumn {

using Real = double;
using Index = Eigen::Index;

// Dense row-major storage so that row slices (segments, templates) stay
// contiguous for per-segment views and binary I/O. 64-bit precision
// throughout; the gradient audit depends on it.
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Rejected caller input (bad shapes, invalid config fields, malformed
// records). The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure at runtime (non-finite loss etc.). Exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-format failures, split per failure mode so callers can distinguish.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};
class TruncatedFileError : public IoError {
 public:
  using IoError::IoError;
};
class DimensionOverflowError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace aumn
