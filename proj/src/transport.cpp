#include "pesl/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "pesl/bytes.hpp"
#include "pesl/errors.hpp"

namespace pesl {

namespace {

std::string errno_text() { return std::strerror(errno); }

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TcpStream::~TcpStream() { close(); }

TcpStream& TcpStream::operator=(TcpStream&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

void TcpStream::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

TcpStream TcpStream::connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw IoError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      set_nodelay(fd);
      return TcpStream(fd);
    }
    ::close(fd);
  }
  throw IoError("connect " + host + ":" + service + ": " + errno_text());
}

void TcpStream::write_all(std::span<const std::uint8_t> bytes) {
  if (fd_ < 0) throw IoError("write on closed socket");
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("socket write: " + errno_text());
    }
    done += static_cast<std::size_t>(n);
  }
}

std::vector<std::uint8_t> TcpStream::read_exact(std::size_t n) {
  if (fd_ < 0) throw IoError("read on closed socket");
  std::vector<std::uint8_t> buf(n);
  std::size_t done = 0;
  while (done < n) {
    const ssize_t got = ::recv(fd_, buf.data() + done, n - done, 0);
    if (got == 0) throw IoError("connection closed by peer");
    if (got < 0) {
      if (errno == EINTR) continue;
      throw IoError("socket read: " + errno_text());
    }
    done += static_cast<std::size_t>(got);
  }
  return buf;
}

std::vector<std::uint8_t> TcpStream::receive_frame(std::uint64_t payload_cap) {
  std::vector<std::uint8_t> frame = read_exact(kFrameHeaderSize);
  const std::uint64_t len = decode_header(frame, payload_cap);
  if (len > 0) {
    std::vector<std::uint8_t> payload = read_exact(static_cast<std::size_t>(len));
    frame.insert(frame.end(), payload.begin(), payload.end());
  }
  return frame;
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string bind_host = (host.empty() || host == "localhost") ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw ConfigError("listener: cannot parse IPv4 address '" + host + "'");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(fd_, 4) != 0) {
    const std::string why = errno_text();
    ::close(fd_);
    throw IoError("listen " + bind_host + ":" + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

TcpStream TcpListener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      set_nodelay(fd);
      return TcpStream(fd);
    }
    if (errno != EINTR) throw IoError("accept: " + errno_text());
  }
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon + 1 == endpoint.size()) {
    throw ConfigError("endpoint '" + endpoint + "' is not host:port");
  }
  const std::string host = endpoint.substr(0, colon);
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(endpoint.substr(colon + 1), &used);
    if (used != endpoint.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw ConfigError("endpoint '" + endpoint + "' has a non-numeric port");
  }
  if (port > 65535) throw ConfigError("endpoint '" + endpoint + "' port out of range");
  return {host, static_cast<std::uint16_t>(port)};
}

TcpTransport TcpTransport::connect(const std::string& endpoint) {
  const auto [host, port] = parse_endpoint(endpoint);
  return TcpTransport(TcpStream::connect(host, port));
}

void TcpTransport::send(const Message& msg) { stream_.send_frame(encode(msg)); }

Message TcpTransport::receive() { return decode(stream_.receive_frame()); }

RecordingTransport::RecordingTransport(Transport& inner,
                                       std::optional<std::filesystem::path> capture)
    : inner_(inner) {
  if (capture) {
    capture_.emplace(*capture, std::ios::binary | std::ios::trunc);
    if (!*capture_) throw IoError("cannot open capture file " + capture->string());
  }
}

void RecordingTransport::record(Direction dir, std::vector<std::uint8_t> bytes) {
  if (capture_) {
    const auto tag = static_cast<char>(dir);
    capture_->write(&tag, 1);
    capture_->write(reinterpret_cast<const char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
    capture_->flush();
  }
  frames_.push_back({dir, std::move(bytes)});
}

void RecordingTransport::send(const Message& msg) {
  record(Direction::to_cloud, encode(msg));
  inner_.send(msg);
}

Message RecordingTransport::receive() {
  Message msg = inner_.receive();
  record(Direction::to_edge, encode(msg));
  return msg;
}

std::vector<RecordingTransport::Frame> read_capture(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  std::vector<RecordingTransport::Frame> frames;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto dir = static_cast<RecordingTransport::Direction>(bytes[pos]);
    if (bytes[pos] > 1) throw DecodeError("capture: bad direction tag", pos);
    ++pos;
    std::span<const std::uint8_t> rest(bytes.data() + pos, bytes.size() - pos);
    const std::uint64_t len = decode_header(rest);
    const std::size_t total = kFrameHeaderSize + static_cast<std::size_t>(len);
    if (rest.size() < total) throw DecodeError("capture: truncated frame", pos);
    frames.push_back({dir, {rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(total)}});
    pos += total;
  }
  return frames;
}

}  // namespace pesl
