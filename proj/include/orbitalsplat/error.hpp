// Copyright Contributors to the OrbitalSplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace orbitalsplat {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad radius, out-of-range threshold, ...).
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// look_at with an up vector parallel to the view direction, or eye == target.
class DegenerateGeometry : public Error {
  public:
    using Error::Error;
};

class BehindCamera : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

/// Malformed input text, carrying the 1-based line number and directive.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, std::string directive, const std::string &what)
        : Error("line " + std::to_string(line) + " (" + directive + "): " + what), line_(line),
          directive_(std::move(directive)) {}

    std::size_t line() const noexcept { return line_; }
    const std::string &directive() const noexcept { return directive_; }

  private:
    std::size_t line_;
    std::string directive_;
};

/// A face references a vertex/uv/normal that does not exist.
class IndexOutOfRange : public ParseError {
  public:
    using ParseError::ParseError;
};

class EmptyInput : public Error {
  public:
    using Error::Error;
};

/// Guidance service could not be reached after all retries.
class TransportError : public Error {
  public:
    using Error::Error;
};

/// Guidance service answered with something that violates the wire schema.
class ProtocolError : public Error {
  public:
    using Error::Error;
};

/// Optimization hit a non-finite loss; a state dump has been written when a dump directory was set.
class OptimizationAborted : public Error {
  public:
    using Error::Error;
};

} // namespace orbitalsplat
