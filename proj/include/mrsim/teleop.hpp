#pragma once

// Human-in-the-loop driving over WebSocket.
//
// Server -> client
//   binary: 16-byte little-endian header {tick u32, flags u32, speed f32,
//           reserved f32} followed by the composited frame as JPEG.
//           flags: bit0 triggered, bit1 collision this tick, bit2 goal, bit3 ended.
//   text:   {"type":"start",...}, {"type":"end","report":{...}},
//           {"type":"error","message":...}
// Client -> server (text)
//   {"type":"cmd","brake":0..1,"steer":rad?}   steer absent = path-following assist
//   {"type":"idle"}                            lockstep only: no input this tick
//
// The simulation loop reads a single-slot mailbox once per tick (latest message
// wins). Without a valid command for longer than the liveness deadline the
// vehicle is commanded to a full stop. In lockstep mode (simulation-time
// tests) the loop waits before each agent phase until the client has answered
// the previous frame, so a scripted client is fully deterministic.

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "json.hpp"
#include "mrsim/harness.hpp"
#include "mrsim/image_io.hpp"

namespace mrsim {

namespace teleop {

enum Flags : std::uint32_t { kTriggered = 1u, kCollision = 2u, kGoal = 4u, kEnded = 8u };

struct FrameHeader {
  std::uint32_t tick = 0;
  std::uint32_t flags = 0;
  float speed = 0.0f;
  float reserved = 0.0f;
  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

inline void put_u32le(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint32_t get_u32le(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::vector<std::uint8_t> encode_frame_msg(const FrameHeader& h, std::span<const std::uint8_t> jpeg) {
  std::vector<std::uint8_t> out(16 + jpeg.size());
  put_u32le(out.data(), h.tick);
  put_u32le(out.data() + 4, h.flags);
  put_u32le(out.data() + 8, std::bit_cast<std::uint32_t>(h.speed));
  put_u32le(out.data() + 12, std::bit_cast<std::uint32_t>(h.reserved));
  std::copy(jpeg.begin(), jpeg.end(), out.begin() + 16);
  return out;
}

inline FrameHeader decode_frame_header(std::span<const std::uint8_t> msg) {
  if (msg.size() < 16) throw IoError("teleop: frame message shorter than its header");
  return {get_u32le(msg.data()), get_u32le(msg.data() + 4), std::bit_cast<float>(get_u32le(msg.data() + 8)),
          std::bit_cast<float>(get_u32le(msg.data() + 12))};
}

}  // namespace teleop

struct HumanCommand {
  double brake = 1.0;
  std::optional<double> steer;  // rad
  friend bool operator==(const HumanCommand&, const HumanCommand&) = default;
};

struct TeleopSession {
  int id = 0;
  HumanCommand command;           // full brake until the first valid command
  std::optional<long> receipt_tick;
  double liveness = 0.5;          // s
};

struct ApplyResult {
  TeleopSession session;
  std::optional<std::string> error;  // set when the message was dropped
};

/// Validates one client text message against the session. Commands are clamped
/// (brake to [0, 1], steer to +-steer_max); malformed messages leave the
/// session untouched and return an error for the client.
inline ApplyResult apply_command(TeleopSession s, const std::string& text, long tick, double steer_max) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return {s, "malformed JSON"};
  const std::string type = j.value("type", "");
  if (type == "idle") return {s, std::nullopt};
  if (type != "cmd") return {s, "unknown message type '" + type + "'"};
  if (!j.contains("brake") || !j["brake"].is_number()) return {s, "cmd.brake must be a number"};
  const double brake = j["brake"].get<double>();
  if (!std::isfinite(brake)) return {s, "cmd.brake must be finite"};
  std::optional<double> steer;
  if (j.contains("steer") && !j["steer"].is_null()) {
    if (!j["steer"].is_number()) return {s, "cmd.steer must be a number"};
    const double v = j["steer"].get<double>();
    if (!std::isfinite(v)) return {s, "cmd.steer must be finite"};
    steer = std::clamp(v, -steer_max, steer_max);
  }
  s.command = {std::clamp(brake, 0.0, 1.0), steer};
  s.receipt_tick = tick;
  return {s, std::nullopt};
}

/// Latest-wins message slot shared between the network thread and the loop.
class Mailbox {
 public:
  void put(std::string msg) {
    std::lock_guard lock(m_);
    pending_.push_back(std::move(msg));
    ++received_;
    cv_.notify_all();
  }
  std::vector<std::string> take() {
    std::lock_guard lock(m_);
    return std::exchange(pending_, {});
  }
  /// Waits until at least `n` messages have ever arrived, or the timeout.
  bool wait_for_count(long n, std::chrono::duration<double> timeout, const std::function<bool()>& give_up) {
    std::unique_lock lock(m_);
    const auto until = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
    while (received_ < n) {
      if (give_up()) return false;
      if (cv_.wait_until(lock, std::min(until, std::chrono::steady_clock::now() + std::chrono::milliseconds(20))) ==
              std::cv_status::timeout &&
          std::chrono::steady_clock::now() >= until)
        return false;
    }
    return true;
  }
  void notify() { cv_.notify_all(); }
  long received() {
    std::lock_guard lock(m_);
    return received_;
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::vector<std::string> pending_;
  long received_ = 0;
};

/// Agent driven by the mailbox. Speed target = cruise * (1 - brake).
class HumanAgent : public Agent {
 public:
  using ErrorSink = std::function<void(const std::string&)>;

  HumanAgent(Mailbox& mailbox, double tick_hz, double steer_max, double liveness, ErrorSink on_error = {})
      : mailbox_(mailbox), tick_hz_(tick_hz), steer_max_(steer_max), on_error_(std::move(on_error)) {
    session_.liveness = liveness;
  }

  AgentCommand step(const AgentObservation& obs) override {
    for (const auto& msg : mailbox_.take()) {
      auto r = apply_command(session_, msg, obs.tick, steer_max_);
      session_ = r.session;
      if (r.error && on_error_) on_error_(*r.error);
    }
    AgentCommand c;
    const bool live =
        session_.receipt_tick && static_cast<double>(obs.tick - *session_.receipt_tick) / tick_hz_ <= session_.liveness;
    c.brake = live ? session_.command.brake : 1.0;
    if (live) c.steer_override = session_.command.steer;
    return c;
  }

  std::string name() const override { return "human"; }
  nlohmann::ordered_json debug_state() const override {
    nlohmann::ordered_json j = {{"brake", session_.command.brake}};
    j["steer"] = session_.command.steer ? nlohmann::ordered_json(*session_.command.steer) : nullptr;
    j["receipt_tick"] = session_.receipt_tick ? nlohmann::ordered_json(*session_.receipt_tick) : nullptr;
    return j;
  }
  const TeleopSession& session() const { return session_; }

 private:
  Mailbox& mailbox_;
  double tick_hz_;
  double steer_max_;
  ErrorSink on_error_;
  TeleopSession session_;
};

struct TeleopOptions {
  std::string bind = "127.0.0.1";
  unsigned short port = 8700;  // 0 picks a free port
  double liveness = 0.5;
  bool lockstep = false;
  double lockstep_timeout = 5.0;  // s of wall time to wait for a lockstep reply
  double wait_for_client = 0.0;   // s of wall time to wait for a driver before starting
  std::size_t queue_depth = 2;    // frames buffered per client; oldest dropped
  int jpeg_quality = 80;
};

class TeleopServer {
 public:
  explicit TeleopServer(TeleopOptions opt = {}) : opt_(std::move(opt)), acceptor_(io_) {
    namespace asio = boost::asio;
    boost::system::error_code ec;
    const auto addr = asio::ip::make_address(opt_.bind, ec);
    if (ec) throw ValidationError("teleop: bad bind address '" + opt_.bind + "'");
    const asio::ip::tcp::endpoint ep(addr, opt_.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw IoError("teleop: cannot listen on " + opt_.bind + ":" + std::to_string(opt_.port) + ": " + ec.message());
    accept();
    thread_ = std::thread([this] { io_.run(); });
  }

  ~TeleopServer() { stop(); }
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void stop() {
    if (stopped_.exchange(true)) return;
    boost::asio::post(io_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      if (auto c = client()) c->close();
    });
    // Let queued frames and the close handshake go out, then stop.
    boost::asio::steady_timer t(io_, std::chrono::milliseconds(200));
    t.async_wait([this](auto) { io_.stop(); });
    if (thread_.joinable()) thread_.join();
  }

  bool has_client() const { return client() != nullptr; }

  /// Runs one episode with the connected human driver.
  EpisodeResult serve(const RunConfig& cfg, const Scenario& scenario, std::uint64_t seed, FrameSource& source,
                      const AssetLibrary& assets) {
    if (opt_.wait_for_client > 0.0) {
      const auto until = std::chrono::steady_clock::now() +
                         std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(opt_.wait_for_client));
      while (!has_client() && std::chrono::steady_clock::now() < until)
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    send_text(nlohmann::ordered_json{{"type", "start"},
                                     {"scenario", scenario.name},
                                     {"tick_hz", cfg.tick_hz},
                                     {"steer_max", cfg.plant.steer_max},
                                     {"cruise", cfg.modular.planner.cruise},
                                     {"liveness", opt_.liveness}}
                  .dump());
    // Lockstep counts replies from here; anything older is stale input.
    mailbox_.take();
    const long replies_base = mailbox_.received();
    HumanAgent agent(mailbox_, cfg.tick_hz, cfg.plant.steer_max, opt_.liveness,
                     [this](const std::string& e) { send_text(error_json(e)); });

    EpisodeHooks hooks;
    long frames_sent = 0;
    if (opt_.lockstep) {
      hooks.before_agent = [&](long tick, double) {
        if (tick == 0) return;
        mailbox_.wait_for_count(replies_base + frames_sent, std::chrono::duration<double>(opt_.lockstep_timeout),
                                [this] { return !has_client(); });
      };
    }
    hooks.after_tick = [&](const TickSnapshot& s) {
      if (!s.frame || !has_client()) return;
      std::uint32_t flags = 0;
      if (s.triggered) flags |= teleop::kTriggered;
      if (s.collision) flags |= teleop::kCollision;
      if (s.goal) flags |= teleop::kGoal;
      if (s.ended) flags |= teleop::kEnded;
      const auto jpeg = encode_jpeg(s.frame->color, opt_.jpeg_quality);
      send_binary(teleop::encode_frame_msg({static_cast<std::uint32_t>(s.tick), flags, static_cast<float>(s.ego.speed), 0.0f}, jpeg));
      ++frames_sent;
    };
    auto result = run_episode(cfg, scenario, seed, agent, source, assets, hooks);
    send_text(nlohmann::ordered_json{{"type", "end"}, {"report", to_json(result.report)}}.dump());
    return result;
  }

  Mailbox& mailbox() { return mailbox_; }

 private:

  class Client : public std::enable_shared_from_this<Client> {
   public:
    Client(boost::asio::ip::tcp::socket sock, TeleopServer& server) : ws_(std::move(sock)), server_(server) {}

    void start(bool accepted) {
      accepted_ = accepted;
      ws_.set_option(boost::beast::websocket::stream_base::timeout::suggested(boost::beast::role_type::server));
      ws_.async_accept([self = shared_from_this()](boost::beast::error_code ec) {
        if (ec) return self->finish();
        self->ready_ = true;
        if (!self->accepted_) {
          self->queue_text(error_json("session already has a driver"));
          self->closing_ = true;
          self->write();
          return;
        }
        self->write();
        self->read();
      });
    }

    void queue_text(std::string s) { queue(Msg{false, std::vector<std::uint8_t>(s.begin(), s.end())}); }
    void queue_binary(std::vector<std::uint8_t> b) { queue(Msg{true, std::move(b)}); }

    void close() {
      closing_ = true;
      if (ready_ && !writing_) do_close();
    }

   private:
    struct Msg {
      bool binary;
      std::vector<std::uint8_t> bytes;
    };

    void queue(Msg m) {
      // Frames may be dropped (oldest first, never the one being written); text never is.
      if (m.binary) {
        std::size_t frames = 0;
        for (const auto& q : out_) frames += q.binary;
        while (frames >= server_.opt_.queue_depth) {
          const auto first = std::find_if(out_.begin() + (writing_ ? 1 : 0), out_.end(), [](const Msg& q) { return q.binary; });
          if (first == out_.end()) break;
          out_.erase(first);
          --frames;
          ++dropped_;
        }
      }
      out_.push_back(std::move(m));
      if (ready_ && !writing_) write();
    }

    void write() {
      if (writing_) return;
      if (out_.empty()) {
        if (closing_) do_close();
        return;
      }
      writing_ = true;
      ws_.binary(out_.front().binary);
      ws_.async_write(boost::asio::buffer(out_.front().bytes), [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
        self->writing_ = false;
        if (ec) return self->finish();
        self->out_.pop_front();
        self->write();
      });
    }

    void read() {
      ws_.async_read(buf_, [self = shared_from_this()](boost::beast::error_code ec, std::size_t) {
        if (ec) return self->finish();
        if (self->ws_.got_text()) {
          self->server_.mailbox_.put(boost::beast::buffers_to_string(self->buf_.data()));
        } else {
          self->queue_text(error_json("binary messages are not accepted"));
        }
        self->buf_.consume(self->buf_.size());
        self->read();
      });
    }

    void do_close() {
      if (closed_) return;
      closed_ = true;
      ws_.async_close(boost::beast::websocket::close_code::normal,
                      [self = shared_from_this()](boost::beast::error_code) { self->finish(); });
    }

    void finish() {
      if (accepted_) server_.detach(this);
    }

    boost::beast::websocket::stream<boost::beast::tcp_stream> ws_;
    TeleopServer& server_;
    boost::beast::flat_buffer buf_;
    std::deque<Msg> out_;
    bool writing_ = false;
    bool closing_ = false;
    bool closed_ = false;
    bool accepted_ = false;
    bool ready_ = false;  // handshake done
    long dropped_ = 0;
  };

  static std::string error_json(const std::string& m) { return nlohmann::json{{"type", "error"}, {"message", m}}.dump(); }

  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, boost::asio::ip::tcp::socket sock) {
      if (ec) return;
      boost::system::error_code ignored;
      sock.set_option(boost::asio::ip::tcp::no_delay(true), ignored);
      auto c = std::make_shared<Client>(std::move(sock), *this);
      bool take;
      {
        std::lock_guard lock(client_mutex_);
        take = client_ == nullptr;
        if (take) client_ = c;
      }
      c->start(take);
      accept();
    });
  }

  void detach(Client* c) {
    {
      std::lock_guard lock(client_mutex_);
      if (client_.get() == c) client_.reset();
    }
    mailbox_.notify();
  }

  std::shared_ptr<Client> client() const {
    std::lock_guard lock(client_mutex_);
    return client_;
  }

  // Called from the simulation thread; never blocks on the network.
  void send_text(std::string s) {
    boost::asio::post(io_, [this, s = std::move(s)]() mutable {
      if (auto c = client()) c->queue_text(std::move(s));
    });
  }
  void send_binary(std::vector<std::uint8_t> b) {
    boost::asio::post(io_, [this, b = std::move(b)]() mutable {
      if (auto c = client()) c->queue_binary(std::move(b));
    });
  }

  TeleopOptions opt_;
  boost::asio::io_context io_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::thread thread_;
  std::atomic<bool> stopped_{false};
  mutable std::mutex client_mutex_;
  std::shared_ptr<Client> client_;
  Mailbox mailbox_;
};

}  // namespace mrsim
