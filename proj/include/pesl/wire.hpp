#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pesl/tensor.hpp"

namespace pesl {

// Frame layout (all integers little-endian):
//   "PESL" | version u8 (=1) | kind u8 | payload_len u64 | payload
// Matrices inside payloads: rows u32 | cols u32 | rows*cols f64.
inline constexpr std::uint8_t kWireMagic[4] = {'P', 'E', 'S', 'L'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 14;
inline constexpr std::uint64_t kDefaultPayloadCap = 1ULL << 30;

enum class MessageKind : std::uint8_t {
  hello = 1,
  config_ack = 2,
  fwd_req = 3,
  fwd_resp = 4,
  bwd_req = 5,
  bwd_ack = 6,
  step = 7,
  shutdown = 8,
  error = 9,
};

const char* to_string(MessageKind kind);

/// HELLO / CONFIG_ACK payload: p u32 | d u32 | n_layers u32.
struct Dims {
  std::uint32_t p = 0;
  std::uint32_t d = 0;
  std::uint32_t n_layers = 0;
  bool operator==(const Dims&) const = default;
};

/// ERROR payload: code u32 | message (u32 length + bytes).
struct ErrorInfo {
  std::uint32_t code = 0;
  std::string message;
  bool operator==(const ErrorInfo&) const = default;
};

/// Error codes carried by ERROR frames.
namespace wire_error {
inline constexpr std::uint32_t handshake = 1;
inline constexpr std::uint32_t out_of_order = 2;
inline constexpr std::uint32_t malformed = 3;
inline constexpr std::uint32_t unexpected = 4;
inline constexpr std::uint32_t shape = 5;
}  // namespace wire_error

/// One framed unit of the edge/cloud protocol.
///
/// Payload by kind:
///   HELLO, CONFIG_ACK         Dims
///   FWD_REQ, FWD_RESP, BWD_REQ one Matrix
///   BWD_ACK                   one Matrix (input gradient, reply to BWD_REQ)
///                             or empty (reply to STEP)
///   STEP, SHUTDOWN            empty
///   ERROR                     ErrorInfo
struct Message {
  using Payload = std::variant<std::monostate, Dims, Matrix, ErrorInfo>;

  MessageKind kind = MessageKind::shutdown;
  Payload payload;

  static Message hello(Dims dims) { return {MessageKind::hello, dims}; }
  static Message config_ack(Dims dims) { return {MessageKind::config_ack, dims}; }
  static Message fwd_req(Matrix m) { return {MessageKind::fwd_req, std::move(m)}; }
  static Message fwd_resp(Matrix m) { return {MessageKind::fwd_resp, std::move(m)}; }
  static Message bwd_req(Matrix m) { return {MessageKind::bwd_req, std::move(m)}; }
  static Message bwd_ack(Matrix m) { return {MessageKind::bwd_ack, std::move(m)}; }
  static Message bwd_ack() { return {MessageKind::bwd_ack, std::monostate{}}; }
  static Message step() { return {MessageKind::step, std::monostate{}}; }
  static Message shutdown() { return {MessageKind::shutdown, std::monostate{}}; }
  static Message error(std::uint32_t code, std::string text) {
    return {MessageKind::error, ErrorInfo{code, std::move(text)}};
  }

  bool has_matrix() const { return std::holds_alternative<Matrix>(payload); }
  const Matrix& matrix() const { return std::get<Matrix>(payload); }
  const Dims& dims() const { return std::get<Dims>(payload); }
  const ErrorInfo& error_info() const { return std::get<ErrorInfo>(payload); }

  bool operator==(const Message&) const = default;
};

/// Throws ContractError if the payload alternative does not fit the kind.
std::vector<std::uint8_t> encode(const Message& msg);

/// Decodes exactly one frame occupying all of `bytes`. Any framing problem
/// raises DecodeError naming the byte offset.
Message decode(std::span<const std::uint8_t> bytes,
               std::uint64_t payload_cap = kDefaultPayloadCap);

/// Validates a 14-byte header and returns the payload length it announces.
std::uint64_t decode_header(std::span<const std::uint8_t> header,
                            std::uint64_t payload_cap = kDefaultPayloadCap);

}  // namespace pesl
