#pragma once

#include <stdexcept>
#include <string>

namespace pesl {

/// Operand dimensions do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the operation's domain (n == 0, label out of range, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A configuration combination that the model cannot honour.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller-side precondition on values (not shapes) was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Framing failure while decoding bytes off the wire.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Peer violated the session state machine or reported an error frame.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(const std::string& what, int code)
      : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

/// Socket, file or transport failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pesl
