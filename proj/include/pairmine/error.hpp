#pragma once

#include <stdexcept>
#include <string>

namespace pairmine {

// Base for every error raised by the library. The CLI maps subclasses to
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

class StaleArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace pairmine
