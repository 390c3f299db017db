#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace affectlab {

// Base of every exception the library throws.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed text input; line is 1-based, 0 when not applicable.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class RangeError : public ParseError {
public:
  using ParseError::ParseError;
};

class MonotonicityError : public ParseError {
public:
  using ParseError::ParseError;
};

class ContiguityError : public ParseError {
public:
  using ParseError::ParseError;
};

class LengthMismatch : public Error {
public:
  using Error::Error;
};

class DegenerateSeries : public Error {
public:
  using Error::Error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class IOError : public Error {
public:
  using Error::Error;
};

class CorruptCheckpoint : public Error {
public:
  using Error::Error;
};

class SpecMismatch : public Error {
public:
  using Error::Error;
};

class ZeroStd : public Error {
public:
  using Error::Error;
};

// Bad configuration or arguments; the CLI maps it to exit code 2.
class UsageError : public Error {
public:
  using Error::Error;
};

}  // namespace affectlab
