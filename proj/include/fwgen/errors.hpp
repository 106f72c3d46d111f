#pragma once

#include <stdexcept>
#include <string>

namespace fwgen {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition (bad parameter, mismatched ids).
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// Unreadable input or schema violation in an input file.
class InputError : public Error {
  public:
    using Error::Error;
};

/// A model response could not be parsed into the expected shape.
class ParseError : public Error {
  public:
    using Error::Error;
};

/// A model response parsed, but a value is outside its allowed range.
class RangeError : public Error {
  public:
    using Error::Error;
};

/// Base of every failure raised from the LLM gateway.
class GatewayError : public Error {
  public:
    using Error::Error;
};

/// Retryable provider failure (rate limit, 5xx, dropped connection).
class TransientError : public GatewayError {
  public:
    using GatewayError::GatewayError;
};

class AuthError : public GatewayError {
  public:
    using GatewayError::GatewayError;
};

class CassetteMiss : public GatewayError {
  public:
    explicit CassetteMiss(const std::string& hash)
        : GatewayError("cassette miss: no recorded response for request " + hash), hash_(hash) {}
    const std::string& hash() const noexcept { return hash_; }

  private:
    std::string hash_;
};

class RetriesExhausted : public GatewayError {
  public:
    using GatewayError::GatewayError;
};

}  // namespace fwgen
