#pragma once

#include <stdexcept>
#include <string>

namespace densify {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed maps, shape mismatches, out-of-range values.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Inconsistent specs, role/channel mismatches, bad config files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint trained against a different class taxonomy.
class FingerprintMismatch : public Error {
 public:
  using Error::Error;
};

/// A metric whose denominator is zero for the given corpus.
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

}  // namespace densify
