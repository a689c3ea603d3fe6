#pragma once

#include <stdexcept>
#include <string>

namespace angiomatch {

// Error taxonomy. The three bases map onto CLI exit codes:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : DataError {
  using DataError::DataError;
};

struct FormatError : DataError {
  using DataError::DataError;
};

struct NonPositiveDepth : NumericError {
  using NumericError::NumericError;
};

struct DegenerateGeometry : NumericError {
  using NumericError::NumericError;
};

struct InsufficientMatches : NumericError {
  using NumericError::NumericError;
};

struct NoConsensus : NumericError {
  using NumericError::NumericError;
};

struct InvalidT : NumericError {
  using NumericError::NumericError;
};

struct OutOfBounds : NumericError {
  using NumericError::NumericError;
};

struct ZeroVector : NumericError {
  using NumericError::NumericError;
};

struct EmptyInput : NumericError {
  using NumericError::NumericError;
};

struct NoMatches : NumericError {
  using NumericError::NumericError;
};

struct DegenerateCovariance : NumericError {
  using NumericError::NumericError;
};

}  // namespace angiomatch
