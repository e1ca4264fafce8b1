#pragma once

#include <stdexcept>
#include <string>

namespace gdpa {

// Base for all library errors. CLI maps UsageError-family to exit 1,
// everything else to exit 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct LabelError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct OracleError : Error {
  using Error::Error;
};
struct RangeError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct UnknownArchError : Error {
  using Error::Error;
};
struct CorruptCheckpointError : Error {
  using Error::Error;
};
struct VersionError : Error {
  using Error::Error;
};
struct MissingCheckpointError : Error {
  using Error::Error;
};
struct CorruptDatasetError : Error {
  using Error::Error;
};
struct ConfigError : UsageError {
  using UsageError::UsageError;
};

}  // namespace gdpa
