#pragma once

#include <stdexcept>
#include <string>

namespace fld {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
  using Error::Error;
};

// API misuse: wrong tape, non-scalar loss, curve/R mismatch.
struct ContractError : Error {
  using Error::Error;
};

// NaN or infinity produced where only finite values are allowed.
struct NumericError : Error {
  using Error::Error;
};

// Bad user input: invalid configuration, invalid dataset content.
struct ValidationError : Error {
  using Error::Error;
};

// Malformed files (JSONL datasets, checkpoints).
struct ParseError : Error {
  using Error::Error;
};

// A series that cannot be split into observation/query parts.
struct UnsplittableError : Error {
  using Error::Error;
};

}  // namespace fld
