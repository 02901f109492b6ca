#pragma once

#include <stdexcept>
#include <string>

namespace dfi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions or feature layouts do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A file could not be parsed (bad magic, truncation, topology mismatch).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Caller supplied an invalid argument or configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfi
