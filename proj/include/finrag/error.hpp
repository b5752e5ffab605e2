#pragma once

#include <stdexcept>
#include <string>

namespace finrag {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition (bad argument, wrong modality, empty input).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Lookup of an id that is not present.
class NotFound : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible persisted file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace finrag
