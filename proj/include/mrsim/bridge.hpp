#pragma once

// Out-of-process agents. The simulator connects to the agent over TCP and, once
// per tick, sends an observation and waits up to a deadline for a command.
//
// Wire format, both directions: 4-byte big-endian payload length, then UTF-8
// JSON. Observation:
//   {"type":"observation","tick":k,"t":s,
//    "ego":{"x","y","heading","speed","steer"},
//    "path":[[x,y],...]                                   (tick 0 only)
//    "camera":{"width","height","fx","fy","cx","cy"},     (tick 0 only)
//    "frame":{"png_base64":...}}                          (if frames enabled)
// Command:
//   {"type":"command","tick":k, "desired_speed"? | "brake"?, "steer"?}
// A command for an older tick is discarded. When no command for the current
// tick arrives in time the previous command is held; before the first command
// the agent asks for a full stop.

#include <boost/asio.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrsim/autonomy.hpp"
#include "mrsim/image_io.hpp"

namespace mrsim {

namespace bridge {

inline std::string encode_frame(const std::string& payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(4, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xff);
  out[1] = static_cast<char>((n >> 16) & 0xff);
  out[2] = static_cast<char>((n >> 8) & 0xff);
  out[3] = static_cast<char>(n & 0xff);
  return out + payload;
}

/// Pops one complete message off the front of `buf`, if there is one.
inline std::optional<std::string> pop_frame(std::string& buf, std::uint32_t max_len = 64u << 20) {
  if (buf.size() < 4) return std::nullopt;
  const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])); };
  const std::uint32_t n = b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3);
  if (n > max_len) throw IoError("bridge: message of " + std::to_string(n) + " bytes exceeds the limit");
  if (buf.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string msg = buf.substr(4, n);
  buf.erase(0, 4 + static_cast<std::size_t>(n));
  return msg;
}

inline std::string base64(std::span<const std::uint8_t> bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

/// Parses a command message; nullopt for anything malformed.
inline std::optional<std::pair<long, AgentCommand>> parse_command(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("type", "") != "command" || !j.contains("tick") ||
      !j["tick"].is_number_integer())
    return std::nullopt;
  AgentCommand c;
  auto num = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k)) return std::nullopt;
    if (!j[k].is_number()) throw ValidationError(k);
    const double v = j[k].get<double>();
    if (!std::isfinite(v)) throw ValidationError(k);
    return v;
  };
  try {
    c.desired_speed = num("desired_speed");
    c.brake = num("brake");
    c.steer_override = num("steer");
  } catch (const ValidationError&) {
    return std::nullopt;
  }
  if (c.desired_speed) c.desired_speed = std::max(0.0, *c.desired_speed);
  if (c.brake) c.brake = std::clamp(*c.brake, 0.0, 1.0);
  if (!c.desired_speed && !c.brake) c.desired_speed = 0.0;
  return std::pair{j["tick"].get<long>(), c};
}

}  // namespace bridge

class ExternalAgent : public Agent {
 public:
  /// `address` is host:port.
  explicit ExternalAgent(const std::string& address, double timeout = 0.2, bool send_frames = false)
      : socket_(io_), timeout_(timeout), send_frames_(send_frames) {
    const auto colon = address.rfind(':');
    if (colon == std::string::npos) throw ValidationError("external agent address must be host:port, got '" + address + "'");
    namespace asio = boost::asio;
    asio::ip::tcp::resolver resolver(io_);
    boost::system::error_code ec;
    const auto endpoints = resolver.resolve(address.substr(0, colon), address.substr(colon + 1), ec);
    if (ec) throw IoError("external agent: cannot resolve " + address + ": " + ec.message());
    asio::connect(socket_, endpoints, ec);
    if (ec) throw IoError("external agent: cannot connect to " + address + ": " + ec.message());
    socket_.set_option(asio::ip::tcp::no_delay(true));
    last_.desired_speed = 0.0;
  }

  AgentCommand step(const AgentObservation& obs) override {
    nlohmann::ordered_json j = {{"type", "observation"},
                                {"tick", obs.tick},
                                {"t", obs.t},
                                {"ego",
                                 {{"x", obs.ego.pose.x},
                                  {"y", obs.ego.pose.y},
                                  {"heading", obs.ego.pose.heading},
                                  {"speed", obs.ego.speed},
                                  {"steer", obs.ego.steer}}}};
    if (!sent_static_ && obs.path) {
      auto pts = nlohmann::ordered_json::array();
      for (const auto& w : obs.path->waypoints()) pts.push_back({w.x(), w.y()});
      j["path"] = pts;
      if (obs.frame) {
        const auto& c = obs.frame->cam;
        j["camera"] = {{"width", c.width}, {"height", c.height}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}};
      }
      sent_static_ = true;
    }
    if (send_frames_ && obs.frame) j["frame"] = {{"png_base64", bridge::base64(encode_png(obs.frame->color))}};

    boost::system::error_code ec;
    boost::asio::write(socket_, boost::asio::buffer(bridge::encode_frame(j.dump())), ec);
    if (ec) throw IoError("external agent: send failed: " + ec.message());

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                                 std::chrono::duration<double>(timeout_));
    while (true) {
      while (auto msg = bridge::pop_frame(buffer_)) {
        if (auto cmd = bridge::parse_command(*msg); cmd && cmd->first >= obs.tick) {
          last_ = cmd->second;
          ++answered_;
          return last_;
        }
      }
      const auto now = std::chrono::steady_clock::now();
      if (now >= deadline || !receive_until(deadline)) break;
    }
    ++missed_;
    return last_;
  }

  std::string name() const override { return "external"; }
  long missed_deadlines() const { return missed_; }
  long answered() const { return answered_; }

 private:
  /// Appends whatever arrives before `deadline`; false on timeout.
  bool receive_until(std::chrono::steady_clock::time_point deadline) {
    std::array<char, 4096> chunk;
    bool got = false;
    boost::system::error_code result = boost::asio::error::would_block;
    socket_.async_read_some(boost::asio::buffer(chunk), [&](const boost::system::error_code& ec, std::size_t n) {
      buffer_.append(chunk.data(), n);
      got = n > 0;
      result = ec;
    });
    io_.restart();
    io_.run_until(deadline);
    if (!io_.stopped()) {
      socket_.cancel();
      io_.restart();
      io_.run();  // let the cancelled handler run; it may still have delivered data
    }
    if (result && result != boost::asio::error::operation_aborted)
      throw IoError("external agent: connection lost: " + result.message());
    return got;
  }

  boost::asio::io_context io_;
  boost::asio::ip::tcp::socket socket_;
  double timeout_;
  bool send_frames_;
  bool sent_static_ = false;
  std::string buffer_;
  AgentCommand last_;
  long missed_ = 0;
  long answered_ = 0;
};

}  // namespace mrsim
