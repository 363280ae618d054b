#include <gtest/gtest.h>

#include <thread>

#include "mrsim/bridge.hpp"
#include "mrsim/frame_source.hpp"

namespace mrsim {
namespace {

namespace net = boost::asio;
using nlohmann::json;

TEST(Framing, LengthPrefixIsBigEndian) {
  const auto f = bridge::encode_frame(std::string(300, 'a'));
  ASSERT_EQ(f.size(), 304u);
  EXPECT_EQ(static_cast<unsigned char>(f[0]), 0);
  EXPECT_EQ(static_cast<unsigned char>(f[2]), 1);
  EXPECT_EQ(static_cast<unsigned char>(f[3]), 44);
}

TEST(Framing, PopsWholeMessagesOnly) {
  std::string buf = bridge::encode_frame("one") + bridge::encode_frame("two");
  const std::string tail = buf.substr(10);
  buf.resize(10);
  EXPECT_EQ(bridge::pop_frame(buf), "one");
  EXPECT_FALSE(bridge::pop_frame(buf));
  buf += tail;
  EXPECT_EQ(bridge::pop_frame(buf), "two");
  EXPECT_TRUE(buf.empty());
  std::string huge = bridge::encode_frame("x");
  huge[0] = '\x7f';
  EXPECT_THROW(bridge::pop_frame(huge), IoError);
}

TEST(Framing, Base64MatchesKnownVector) {
  const std::string s = "foobar";
  EXPECT_EQ(bridge::base64(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), "Zm9vYmFy");
}

TEST(ParseCommand, Variants) {
  auto c = bridge::parse_command(R"({"type":"command","tick":4,"desired_speed":1.5,"steer":0.1})");
  ASSERT_TRUE(c);
  EXPECT_EQ(c->first, 4);
  EXPECT_DOUBLE_EQ(*c->second.desired_speed, 1.5);
  EXPECT_DOUBLE_EQ(*c->second.steer_override, 0.1);
  c = bridge::parse_command(R"({"type":"command","tick":1,"brake":3})");
  ASSERT_TRUE(c);
  EXPECT_DOUBLE_EQ(*c->second.brake, 1.0);
  c = bridge::parse_command(R"({"type":"command","tick":1})");
  ASSERT_TRUE(c);
  EXPECT_DOUBLE_EQ(*c->second.desired_speed, 0.0);
  c = bridge::parse_command(R"({"type":"command","tick":1,"desired_speed":-2})");
  EXPECT_DOUBLE_EQ(*c->second.desired_speed, 0.0);
  for (const char* bad : {"{", R"({"type":"command"})", R"({"type":"cmd","tick":1})", R"({"type":"command","tick":1.5})",
                          R"({"type":"command","tick":1,"brake":"x"})"})
    EXPECT_FALSE(bridge::parse_command(bad)) << bad;
}

/// One-connection agent process stand-in. For each observation it sends the
/// replies the script returns (possibly none, possibly stale).
class FakeAgentServer {
 public:
  using Script = std::function<std::vector<json>(const json& observation)>;

  explicit FakeAgentServer(Script script) : acceptor_(io_, {net::ip::make_address("127.0.0.1"), 0}), script_(std::move(script)) {
    thread_ = std::thread([this] { serve(); });
  }
  ~FakeAgentServer() {
    if (thread_.joinable()) thread_.join();
  }
  std::string address() const { return "127.0.0.1:" + std::to_string(acceptor_.local_endpoint().port()); }

  std::vector<json> observations;

 private:
  void serve() {
    net::ip::tcp::socket sock(io_);
    acceptor_.accept(sock);
    std::string buf;
    std::array<char, 65536> chunk;
    boost::system::error_code ec;
    while (true) {
      const auto n = sock.read_some(net::buffer(chunk), ec);
      if (ec) return;
      buf.append(chunk.data(), n);
      while (auto msg = bridge::pop_frame(buf)) {
        observations.push_back(json::parse(*msg));
        for (const auto& reply : script_(observations.back())) net::write(sock, net::buffer(bridge::encode_frame(reply.dump())), ec);
      }
    }
  }

  net::io_context io_;
  net::ip::tcp::acceptor acceptor_;
  Script script_;
  std::thread thread_;
};

json command(long tick, double speed) { return {{"type", "command"}, {"tick", tick}, {"desired_speed", speed}}; }

AgentObservation observation(long tick, const FrameRGBD* frame, const PlannedPath* path) {
  AgentObservation o;
  o.tick = tick;
  o.t = 0.1 * static_cast<double>(tick);
  o.frame = frame;
  o.path = path;
  o.ego.pose = Pose2(0.2 * static_cast<double>(tick), 0.0, 0.0);
  o.ego.speed = 2.0;
  return o;
}

TEST(ExternalAgent, DeadlinesHoldAndStaleRepliesAreDropped) {
  FakeAgentServer server([](const json& obs) -> std::vector<json> {
    const long k = obs["tick"].get<long>();
    switch (k) {
      case 0: return {command(0, 1.0)};
      case 1: return {command(1, 1.5)};
      case 2: return {};                                  // miss: hold 1.5
      case 3: return {command(2, 9.0)};                   // stale: still a miss
      case 4: return {command(4, 0.5), command(4, 0.7)};  // first wins this tick
      default: return {{{"type", "command"}, {"tick", k}, {"brake", 0.25}}};
    }
  });
  CameraModel cam;
  cam.width = 16;
  cam.height = 9;
  cam.fx = cam.fy = 8;
  cam.cx = 8;
  cam.cy = 4.5;
  const auto frame = render_synthetic({}, vehicle_camera_pose(Pose2(), 1.5, 0.1), cam);
  const PlannedPath path({{0, 0}, {10, 0}});
  std::vector<AgentCommand> out;
  {
    ExternalAgent agent(server.address(), 0.05, true);
    for (long k = 0; k < 7; ++k) out.push_back(agent.step(observation(k, &frame, &path)));
    EXPECT_EQ(agent.missed_deadlines(), 2);
    EXPECT_EQ(agent.answered(), 5);
  }
  EXPECT_DOUBLE_EQ(*out[0].desired_speed, 1.0);
  EXPECT_DOUBLE_EQ(*out[1].desired_speed, 1.5);
  EXPECT_DOUBLE_EQ(*out[2].desired_speed, 1.5);
  EXPECT_DOUBLE_EQ(*out[3].desired_speed, 1.5);
  EXPECT_DOUBLE_EQ(*out[4].desired_speed, 0.5);
  // The second tick-4 reply arrives during tick 5 and is stale there.
  EXPECT_DOUBLE_EQ(*out[5].brake, 0.25);
  EXPECT_FALSE(out[5].desired_speed);
  EXPECT_DOUBLE_EQ(*out[6].brake, 0.25);

  ASSERT_EQ(server.observations.size(), 7u);
  const auto& first = server.observations[0];
  EXPECT_EQ(first["type"], "observation");
  ASSERT_TRUE(first.contains("path"));
  EXPECT_EQ(first["path"].size(), 2u);
  EXPECT_EQ(first["camera"]["width"], 16);
  EXPECT_FALSE(server.observations[1].contains("path"));
  EXPECT_DOUBLE_EQ(server.observations[3]["ego"]["x"].get<double>(), 0.6000000000000001);
  // Frames round-trip as PNG.
  std::vector<std::uint8_t> png(server.observations[2]["frame"]["png_base64"].get<std::string>().size());
  const auto decoded = boost::beast::detail::base64::decode(
      png.data(), server.observations[2]["frame"]["png_base64"].get<std::string>().data(),
      server.observations[2]["frame"]["png_base64"].get<std::string>().size());
  png.resize(decoded.first);
  EXPECT_EQ(decode_png(png), frame.color);
}

TEST(ExternalAgent, SilentAgentMeansStop) {
  FakeAgentServer server([](const json&) { return std::vector<json>{}; });
  ExternalAgent agent(server.address(), 0.02);
  const PlannedPath path({{0, 0}, {10, 0}});
  const auto c = agent.step(observation(0, nullptr, &path));
  EXPECT_DOUBLE_EQ(*c.desired_speed, 0.0);
  EXPECT_EQ(agent.missed_deadlines(), 1);
}

}  // namespace
}  // namespace mrsim
