#ifndef MICRONET_ERRORS_HPP
#define MICRONET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace micronet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mismatched tensor dimensions; message names the offending axis.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid hyperparameter or layer parameter (dilation < 1, zero fan-in, ...).
struct ParamError : Error {
  using Error::Error;
};

// Data fails a contract (labels out of range, non-one-hot targets, ...).
struct ValidationError : Error {
  using Error::Error;
};

// Malformed file content; message carries a byte offset where known.
struct ParseError : Error {
  using Error::Error;
};

// Corrupt or truncated checkpoint / tensor file.
struct IntegrityError : Error {
  using Error::Error;
};

// Receptive-field analysis cannot run on the given domain.
struct AnalysisError : Error {
  using Error::Error;
};

// Numeric failure at runtime (NaN loss); maps to CLI exit code 3.
struct NumericError : Error {
  using Error::Error;
};

// Filesystem failure; message carries the path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace micronet

#endif
