#pragma once

#include <stdexcept>
#include <string>

namespace meal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor or volume shapes that do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Wrong number or kind of inputs for a model variant or command.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A statistical test cannot be applied to the given sample.
class TestInapplicableError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or other unrecoverable training condition.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace meal
