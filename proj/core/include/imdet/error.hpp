#pragma once

#include <stdexcept>
#include <string>

namespace imdet {

enum class ErrorKind {
  config,     // invalid configuration or dataset role
  argument,   // caller passed an invalid value
  transport,  // generator / scorer service unreachable
  protocol,   // service answered with a malformed payload
  format,     // undecodable file or payload
  numeric,    // NaN / Inf surfaced from the numerics
  invariant,  // internal invariant violated
  io,         // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& message, int attempts)
      : Error(ErrorKind::transport, message + " (after " + std::to_string(attempts) + " attempts)"),
        attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace imdet
