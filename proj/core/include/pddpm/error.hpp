#pragma once

#include <stdexcept>
#include <string>

namespace pddpm {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor/volume extents. The message names the op and the dims.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on a scalar argument was violated (timestep out of range,
// odd embedding width, bad schedule bounds, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered, or training diverged.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Missing files, I/O failures, split leakage, missing pipeline prerequisites.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration. what() lists every offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk artifact (volume or checkpoint file).
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kBadHeader, kTruncated, kChecksum, kContract };

  FormatError(Kind kind, const std::string& what) : Error("format: " + what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pddpm
