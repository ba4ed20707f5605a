#pragma once

#include <stdexcept>
#include <string>

namespace m3sr {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite values encountered during a numeric evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Matrix inversion impossible in dense ZOH discretization.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedPayloadError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace m3sr
