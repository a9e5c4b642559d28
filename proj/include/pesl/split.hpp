#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "pesl/encoder.hpp"
#include "pesl/transport.hpp"
#include "pesl/wire.hpp"

namespace pesl {

/// The cloud's model (F2) and its optimizer. Sessions borrow it one at a time.
class CloudServer {
 public:
  CloudServer(EncoderStack blocks, EncoderOptions options, double lr);

  const EncoderStack& blocks() const noexcept { return blocks_; }
  const EncoderOptions& options() const noexcept { return options_; }
  double lr() const noexcept { return lr_; }
  std::size_t width() const noexcept { return blocks_.front().dim(); }

  /// Test hook: after this many FWD_REQ frames (counted across sessions) the
  /// cloud answers the next FWD_REQ with SHUTDOWN and closes the session.
  void shutdown_after_forwards(std::size_t n) { shutdown_after_ = n; }

 private:
  friend class CloudSession;

  EncoderStack blocks_;
  EncoderOptions options_;
  double lr_;
  std::size_t forwards_served_ = 0;
  std::optional<std::size_t> shutdown_after_;
};

/// Per-connection state machine:
///   HELLO -> CONFIG_ACK
///   FWD_REQ(Z') -> FWD_RESP(F2(Z')), caching activations for one sample
///   BWD_REQ(G') -> BWD_ACK(dZ'), accumulating weight gradients
///   STEP -> BWD_ACK (empty) after applying SGD to the accumulated gradients
///   SHUTDOWN -> close, no reply
/// Anything else is answered with ERROR; malformed frames also close.
class CloudSession {
 public:
  explicit CloudSession(CloudServer& server) : server_(server) {}

  /// Returns the reply, or nullopt when no reply is due (SHUTDOWN).
  std::optional<Message> handle(const Message& msg);
  /// Byte-level entry point: decodes, handles and re-encodes. Returns an
  /// empty vector when no reply is due.
  std::vector<std::uint8_t> handle_frame(std::span<const std::uint8_t> frame);

  bool closed() const noexcept { return closed_; }

 private:
  Message fail(std::uint32_t code, std::string text, bool close = false);

  CloudServer& server_;
  std::optional<Dims> dims_;
  std::optional<std::vector<EncoderActivations>> in_flight_;
  std::vector<EncoderGradients> pending_;
  bool closed_ = false;
};

/// Serves up to max_sessions connections sequentially (0 = forever). Malformed
/// frames end the offending session, not the server.
void run_cloud(TcpListener& listener, CloudServer& server, std::size_t max_sessions = 0);

/// In-process transport: every message is framed, handed to a CloudSession as
/// bytes, and the reply frame decoded, so loopback exercises the same
/// serialization path as TCP.
class LoopbackTransport final : public Transport {
 public:
  explicit LoopbackTransport(CloudServer& server) : session_(server) {}

  void send(const Message& msg) override;
  Message receive() override;

 private:
  CloudSession session_;
  std::deque<std::vector<std::uint8_t>> replies_;
};

/// Typed edge-side calls over a Transport. ERROR replies surface as
/// ProtocolError carrying the wire error code; a SHUTDOWN from the cloud as
/// ProtocolError with code 0.
class CloudClient {
 public:
  explicit CloudClient(Transport& transport) : transport_(transport) {}

  Dims hello(const Dims& dims);
  Matrix forward(const Matrix& z);
  Matrix backward(const Matrix& grad);
  void step();
  void shutdown();

 private:
  Message expect(MessageKind kind);

  Transport& transport_;
};

}  // namespace pesl
