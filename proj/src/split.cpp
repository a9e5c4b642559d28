#include "pesl/split.hpp"

#include <iostream>

#include "pesl/errors.hpp"

namespace pesl {

CloudServer::CloudServer(EncoderStack blocks, EncoderOptions options, double lr)
    : blocks_(std::move(blocks)), options_(options), lr_(lr) {
  if (blocks_.empty()) throw ConfigError("cloud: empty encoder stack");
  for (const auto& b : blocks_) b.validate(options_);
}

Message CloudSession::fail(std::uint32_t code, std::string text, bool close) {
  if (close) closed_ = true;
  return Message::error(code, std::move(text));
}

std::optional<Message> CloudSession::handle(const Message& msg) {
  if (closed_) return fail(wire_error::unexpected, "session closed", true);

  if (msg.kind == MessageKind::shutdown) {
    closed_ = true;
    return std::nullopt;
  }
  if (msg.kind == MessageKind::hello) {
    const Dims& d = msg.dims();
    if (d.d != server_.width() ||
        (d.n_layers != 0 && d.n_layers != server_.blocks_.size()) || d.p == 0) {
      return fail(wire_error::handshake,
                  "handshake: edge dims p=" + std::to_string(d.p) + " d=" + std::to_string(d.d) +
                      " n_layers=" + std::to_string(d.n_layers) + " do not match cloud d=" +
                      std::to_string(server_.width()) +
                      " n_layers=" + std::to_string(server_.blocks_.size()),
                  true);
    }
    dims_ = d;
    in_flight_.reset();
    pending_.clear();
    return Message::config_ack(
        Dims{d.p, d.d, static_cast<std::uint32_t>(server_.blocks_.size())});
  }
  if (!dims_) return fail(wire_error::handshake, "HELLO required before " +
                                                     std::string(to_string(msg.kind)));

  switch (msg.kind) {
    case MessageKind::fwd_req: {
      const Matrix& z = msg.matrix();
      if (z.rows() != dims_->p || z.cols() != dims_->d) {
        return fail(wire_error::shape, "FWD_REQ matrix " + z.shape_str() + " does not match " +
                                           std::to_string(dims_->p) + "x" +
                                           std::to_string(dims_->d));
      }
      if (server_.shutdown_after_ && server_.forwards_served_ >= *server_.shutdown_after_) {
        closed_ = true;
        return Message::shutdown();
      }
      ++server_.forwards_served_;
      std::vector<EncoderActivations> acts;
      Matrix out = stack_forward(server_.blocks_, server_.options_, z, acts);
      in_flight_ = std::move(acts);
      return Message::fwd_resp(std::move(out));
    }
    case MessageKind::bwd_req: {
      if (!in_flight_) {
        return fail(wire_error::out_of_order, "BWD_REQ without a matching FWD_REQ");
      }
      const Matrix& g = msg.matrix();
      if (g.rows() != dims_->p || g.cols() != dims_->d) {
        return fail(wire_error::shape, "BWD_REQ matrix " + g.shape_str() + " has wrong shape");
      }
      StackGradients grads = stack_backward(server_.blocks_, server_.options_, *in_flight_, g);
      in_flight_.reset();
      if (pending_.empty()) {
        pending_ = std::move(grads.blocks);
      } else {
        for (std::size_t i = 0; i < pending_.size(); ++i) accumulate(pending_[i], grads.blocks[i]);
      }
      return Message::bwd_ack(std::move(grads.d_z));
    }
    case MessageKind::step: {
      for (std::size_t i = 0; i < pending_.size(); ++i) {
        sgd_update(server_.blocks_[i], pending_[i], server_.lr_);
      }
      pending_.clear();
      return Message::bwd_ack();
    }
    default:
      return fail(wire_error::unexpected,
                  std::string("unexpected ") + to_string(msg.kind) + " from edge");
  }
}

std::vector<std::uint8_t> CloudSession::handle_frame(std::span<const std::uint8_t> frame) {
  Message msg;
  try {
    msg = decode(frame);
  } catch (const DecodeError& e) {
    return encode(fail(wire_error::malformed, e.what(), true));
  }
  std::optional<Message> reply = handle(msg);
  return reply ? encode(*reply) : std::vector<std::uint8_t>{};
}

void run_cloud(TcpListener& listener, CloudServer& server, std::size_t max_sessions) {
  for (std::size_t served = 0; max_sessions == 0 || served < max_sessions; ++served) {
    TcpStream stream = listener.accept();
    CloudSession session(server);
    try {
      while (!session.closed()) {
        std::vector<std::uint8_t> frame;
        try {
          frame = stream.receive_frame();
        } catch (const DecodeError& e) {
          stream.send_frame(encode(Message::error(wire_error::malformed, e.what())));
          break;
        }
        const std::vector<std::uint8_t> reply = session.handle_frame(frame);
        if (!reply.empty()) stream.send_frame(reply);
      }
    } catch (const IoError& e) {
      std::cerr << "cloud: session ended: " << e.what() << '\n';
    }
  }
}

void LoopbackTransport::send(const Message& msg) {
  std::vector<std::uint8_t> reply = session_.handle_frame(encode(msg));
  if (!reply.empty()) replies_.push_back(std::move(reply));
}

Message LoopbackTransport::receive() {
  if (replies_.empty()) throw IoError("loopback: no reply pending (session closed)");
  std::vector<std::uint8_t> frame = std::move(replies_.front());
  replies_.pop_front();
  return decode(frame);
}

Message CloudClient::expect(MessageKind kind) {
  Message reply = transport_.receive();
  if (reply.kind == MessageKind::error) {
    throw ProtocolError("cloud error " + std::to_string(reply.error_info().code) + ": " +
                            reply.error_info().message,
                        static_cast<int>(reply.error_info().code));
  }
  if (reply.kind == MessageKind::shutdown) throw ProtocolError("cloud shut down the session", 0);
  if (reply.kind != kind) {
    throw ProtocolError(std::string("expected ") + to_string(kind) + ", got " +
                            to_string(reply.kind),
                        static_cast<int>(wire_error::unexpected));
  }
  return reply;
}

Dims CloudClient::hello(const Dims& dims) {
  transport_.send(Message::hello(dims));
  try {
    return expect(MessageKind::config_ack).dims();
  } catch (const ProtocolError& e) {
    throw ProtocolError(std::string("handshake failed: ") + e.what(), e.code());
  }
}

Matrix CloudClient::forward(const Matrix& z) {
  transport_.send(Message::fwd_req(z));
  return expect(MessageKind::fwd_resp).matrix();
}

Matrix CloudClient::backward(const Matrix& grad) {
  transport_.send(Message::bwd_req(grad));
  Message reply = expect(MessageKind::bwd_ack);
  if (!reply.has_matrix()) {
    throw ProtocolError("BWD_ACK to BWD_REQ carried no gradient",
                        static_cast<int>(wire_error::unexpected));
  }
  return reply.matrix();
}

void CloudClient::step() {
  transport_.send(Message::step());
  expect(MessageKind::bwd_ack);
}

void CloudClient::shutdown() { transport_.send(Message::shutdown()); }

}  // namespace pesl
