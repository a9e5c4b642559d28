#include "pesl/wire.hpp"

#include <algorithm>

#include "pesl/bytes.hpp"
#include "pesl/errors.hpp"

namespace pesl {

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::hello: return "HELLO";
    case MessageKind::config_ack: return "CONFIG_ACK";
    case MessageKind::fwd_req: return "FWD_REQ";
    case MessageKind::fwd_resp: return "FWD_RESP";
    case MessageKind::bwd_req: return "BWD_REQ";
    case MessageKind::bwd_ack: return "BWD_ACK";
    case MessageKind::step: return "STEP";
    case MessageKind::shutdown: return "SHUTDOWN";
    case MessageKind::error: return "ERROR";
  }
  return "UNKNOWN";
}

namespace {

enum class PayloadShape { none, dims, matrix, optional_matrix, error };

PayloadShape shape_of(MessageKind kind) {
  switch (kind) {
    case MessageKind::hello:
    case MessageKind::config_ack: return PayloadShape::dims;
    case MessageKind::fwd_req:
    case MessageKind::fwd_resp:
    case MessageKind::bwd_req: return PayloadShape::matrix;
    case MessageKind::bwd_ack: return PayloadShape::optional_matrix;
    case MessageKind::step:
    case MessageKind::shutdown: return PayloadShape::none;
    case MessageKind::error: return PayloadShape::error;
  }
  throw ContractError("unknown message kind");
}

bool known_kind(std::uint8_t k) { return k >= 1 && k <= 9; }

}  // namespace

std::vector<std::uint8_t> encode(const Message& msg) {
  ByteWriter payload;
  const PayloadShape shape = shape_of(msg.kind);
  const auto mismatch = [&] {
    return ContractError(std::string("encode: payload does not fit ") + to_string(msg.kind));
  };
  switch (shape) {
    case PayloadShape::none:
      if (!std::holds_alternative<std::monostate>(msg.payload)) throw mismatch();
      break;
    case PayloadShape::dims: {
      if (!std::holds_alternative<Dims>(msg.payload)) throw mismatch();
      const Dims& d = msg.dims();
      payload.u32(d.p);
      payload.u32(d.d);
      payload.u32(d.n_layers);
      break;
    }
    case PayloadShape::matrix:
      if (!msg.has_matrix()) throw mismatch();
      payload.matrix(msg.matrix());
      break;
    case PayloadShape::optional_matrix:
      if (msg.has_matrix()) {
        payload.matrix(msg.matrix());
      } else if (!std::holds_alternative<std::monostate>(msg.payload)) {
        throw mismatch();
      }
      break;
    case PayloadShape::error: {
      if (!std::holds_alternative<ErrorInfo>(msg.payload)) throw mismatch();
      payload.u32(msg.error_info().code);
      payload.str(msg.error_info().message);
      break;
    }
  }

  ByteWriter frame;
  frame.bytes(kWireMagic);
  frame.u8(kWireVersion);
  frame.u8(static_cast<std::uint8_t>(msg.kind));
  frame.u64(payload.buffer().size());
  frame.bytes(payload.buffer());
  return frame.take();
}

std::uint64_t decode_header(std::span<const std::uint8_t> header, std::uint64_t payload_cap) {
  if (header.size() < kFrameHeaderSize) {
    throw DecodeError("truncated frame header (" + std::to_string(header.size()) + " bytes)",
                      header.size());
  }
  if (!std::equal(std::begin(kWireMagic), std::end(kWireMagic), header.begin())) {
    throw DecodeError("bad magic", 0);
  }
  if (header[4] != kWireVersion) {
    throw DecodeError("unsupported version " + std::to_string(header[4]), 4);
  }
  if (!known_kind(header[5])) {
    throw DecodeError("unknown message kind " + std::to_string(header[5]), 5);
  }
  ByteReader len(header.subspan(6, 8), 6);
  const std::uint64_t payload_len = len.u64();
  if (payload_len > payload_cap) {
    throw DecodeError("payload length " + std::to_string(payload_len) + " exceeds cap " +
                          std::to_string(payload_cap),
                      6);
  }
  return payload_len;
}

Message decode(std::span<const std::uint8_t> bytes, std::uint64_t payload_cap) {
  const std::uint64_t payload_len = decode_header(bytes, payload_cap);
  const std::size_t available = bytes.size() - kFrameHeaderSize;
  if (available < payload_len) {
    throw DecodeError("truncated payload: expected " + std::to_string(payload_len) +
                          " bytes, have " + std::to_string(available),
                      bytes.size());
  }
  if (available > payload_len) {
    throw DecodeError("trailing bytes after frame", kFrameHeaderSize + payload_len);
  }

  Message msg;
  msg.kind = static_cast<MessageKind>(bytes[5]);
  ByteReader in(bytes.subspan(kFrameHeaderSize), kFrameHeaderSize);
  switch (shape_of(msg.kind)) {
    case PayloadShape::none:
      msg.payload = std::monostate{};
      break;
    case PayloadShape::dims: {
      Dims d;
      d.p = in.u32();
      d.d = in.u32();
      d.n_layers = in.u32();
      msg.payload = d;
      break;
    }
    case PayloadShape::matrix:
      msg.payload = in.matrix();
      break;
    case PayloadShape::optional_matrix:
      if (in.at_end()) {
        msg.payload = std::monostate{};
      } else {
        msg.payload = in.matrix();
      }
      break;
    case PayloadShape::error: {
      ErrorInfo e;
      e.code = in.u32();
      e.message = in.str();
      msg.payload = std::move(e);
      break;
    }
  }
  if (!in.at_end()) {
    throw DecodeError(std::string("payload of ") + to_string(msg.kind) +
                          " longer than its contents",
                      in.offset());
  }
  return msg;
}

}  // namespace pesl
