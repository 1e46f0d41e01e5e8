#pragma once

#include <stdexcept>
#include <string>

namespace mmdesign {

/// Bad or inconsistent input data (corpus, split, checkpoint). CLI exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorpusError : DataError {
  using DataError::DataError;
};

struct CheckpointError : DataError {
  using DataError::DataError;
};

struct TransferError : DataError {
  using DataError::DataError;
};

/// Degenerate geometry, e.g. collinear backbone atoms.
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor or weight shapes that do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite loss or metric during training. CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad command line. CLI exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mmdesign
