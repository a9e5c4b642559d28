#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pesl/wire.hpp"

namespace pesl {

/// Edge-side view of the channel to the cloud: strictly alternating
/// send/receive of whole frames.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const Message& msg) = 0;
  virtual Message receive() = 0;
};

/// Owning TCP socket. Reads and writes whole frames.
class TcpStream {
 public:
  TcpStream() = default;
  explicit TcpStream(int fd) : fd_(fd) {}
  ~TcpStream();
  TcpStream(TcpStream&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  TcpStream& operator=(TcpStream&& other) noexcept;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;

  static TcpStream connect(const std::string& host, std::uint16_t port);

  bool is_open() const noexcept { return fd_ >= 0; }
  void close();

  void write_all(std::span<const std::uint8_t> bytes);
  /// Reads exactly n bytes; throws IoError on EOF or socket failure.
  std::vector<std::uint8_t> read_exact(std::size_t n);

  void send_frame(std::span<const std::uint8_t> frame) { write_all(frame); }
  /// Reads one complete frame (header + payload) without decoding the payload.
  std::vector<std::uint8_t> receive_frame(std::uint64_t payload_cap = kDefaultPayloadCap);

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  /// Binds host:port; port 0 picks an ephemeral port (see port()).
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  TcpStream accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// "host:port" -> (host, port). Throws ConfigError on malformed input.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(TcpStream stream) : stream_(std::move(stream)) {}
  static TcpTransport connect(const std::string& endpoint);

  void send(const Message& msg) override;
  Message receive() override;

 private:
  TcpStream stream_;
};

/// Wraps another transport and keeps every frame that crosses it. When a
/// capture path is given, frames are also appended to that file as
/// direction u8 (0 = edge->cloud, 1 = cloud->edge) | frame bytes.
class RecordingTransport final : public Transport {
 public:
  enum class Direction : std::uint8_t { to_cloud = 0, to_edge = 1 };
  struct Frame {
    Direction direction;
    std::vector<std::uint8_t> bytes;
  };

  explicit RecordingTransport(Transport& inner,
                              std::optional<std::filesystem::path> capture = std::nullopt);

  void send(const Message& msg) override;
  Message receive() override;

  const std::vector<Frame>& frames() const noexcept { return frames_; }

 private:
  void record(Direction dir, std::vector<std::uint8_t> bytes);

  Transport& inner_;
  std::vector<Frame> frames_;
  std::optional<std::ofstream> capture_;
};

/// Reads a capture file written by RecordingTransport.
std::vector<RecordingTransport::Frame> read_capture(const std::filesystem::path& path);

}  // namespace pesl
