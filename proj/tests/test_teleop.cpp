#include <gtest/gtest.h>

#include "mrsim/teleop.hpp"
#include "teleop_client.hpp"

namespace mrsim {
namespace {

using nlohmann::json;
using test_support::ScriptedClient;

const std::string kIdle = R"({"type":"idle"})";
std::string cmd(double brake) { return json{{"type", "cmd"}, {"brake", brake}}.dump(); }

// ---- pure session logic ------------------------------------------------------------

TEST(ApplyCommand, ClampsBrakeAndSteer) {
  TeleopSession s;
  auto r = apply_command(s, R"({"type":"cmd","brake":1.5})", 3, 0.6);
  EXPECT_FALSE(r.error);
  EXPECT_DOUBLE_EQ(r.session.command.brake, 1.0);
  EXPECT_EQ(r.session.receipt_tick, 3);
  r = apply_command(s, R"({"type":"cmd","brake":-0.2,"steer":2.0})", 4, 0.6);
  EXPECT_DOUBLE_EQ(r.session.command.brake, 0.0);
  EXPECT_DOUBLE_EQ(*r.session.command.steer, 0.6);
  r = apply_command(s, R"({"type":"cmd","brake":0.3,"steer":-0.1})", 4, 0.6);
  EXPECT_DOUBLE_EQ(*r.session.command.steer, -0.1);
}

TEST(ApplyCommand, MalformedIsDroppedAndReported) {
  TeleopSession s;
  s = apply_command(s, cmd(0.25), 1, 0.6).session;
  for (const std::string bad : {"{", R"({"type":"cmd"})", R"({"type":"cmd","brake":"0.5"})",
                                R"({"type":"cmd","brake":0.5,"steer":"NaN"})", R"({"type":"cmd","brake":NaN})",
                                R"({"type":"warp"})", "[1,2]"}) {
    const auto r = apply_command(s, bad, 7, 0.6);
    EXPECT_TRUE(r.error) << bad;
    EXPECT_EQ(r.session.command, s.command) << bad;
    EXPECT_EQ(r.session.receipt_tick, 1) << bad;
  }
  const auto idle = apply_command(s, kIdle, 7, 0.6);
  EXPECT_FALSE(idle.error);
  EXPECT_EQ(idle.session.receipt_tick, 1);
}

AgentObservation obs_at(long tick) {
  AgentObservation o;
  o.tick = tick;
  o.t = 0.1 * static_cast<double>(tick);
  return o;
}

TEST(HumanAgent, LatestMessageWinsWithinATick) {
  Mailbox box;
  HumanAgent agent(box, 10.0, 0.6, 0.5);
  box.put(cmd(0.1));
  box.put(cmd(0.7));
  EXPECT_DOUBLE_EQ(*agent.step(obs_at(0)).brake, 0.7);
}

TEST(HumanAgent, FullBrakeBeforeFirstCommand) {
  Mailbox box;
  HumanAgent agent(box, 10.0, 0.6, 0.5);
  for (long k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(*agent.step(obs_at(k)).brake, 1.0);
}

TEST(HumanAgent, LivenessDeadlineInSimTicks) {
  Mailbox box;
  HumanAgent agent(box, 10.0, 0.6, 0.5);
  box.put(R"({"type":"cmd","brake":0.0,"steer":0.2})");
  for (long k = 0; k <= 5; ++k) {
    const auto c = agent.step(obs_at(k));
    EXPECT_DOUBLE_EQ(*c.brake, 0.0) << k;
    EXPECT_DOUBLE_EQ(*c.steer_override, 0.2);
  }
  const auto c = agent.step(obs_at(6));
  EXPECT_DOUBLE_EQ(*c.brake, 1.0);
  EXPECT_FALSE(c.steer_override);
  // A fresh command restores control.
  box.put(cmd(0.5));
  EXPECT_DOUBLE_EQ(*agent.step(obs_at(9)).brake, 0.5);
}

TEST(HumanAgent, ErrorsGoToTheSink) {
  Mailbox box;
  std::vector<std::string> errors;
  HumanAgent agent(box, 10.0, 0.6, 0.5, [&](const std::string& e) { errors.push_back(e); });
  box.put("not json");
  agent.step(obs_at(0));
  ASSERT_EQ(errors.size(), 1u);
}

TEST(FrameHeader, RoundTripAndLayout) {
  const teleop::FrameHeader h{1234567, teleop::kTriggered | teleop::kEnded, 1.75f, 0.0f};
  const std::vector<std::uint8_t> jpeg{0xff, 0xd8, 0xff};
  const auto msg = teleop::encode_frame_msg(h, jpeg);
  ASSERT_EQ(msg.size(), 19u);
  EXPECT_EQ(msg[0], 1234567 & 0xff);
  EXPECT_EQ(msg[3], (1234567 >> 24) & 0xff);
  EXPECT_EQ(msg[4], 9);
  // 1.75f = 0x3fe00000
  EXPECT_EQ(msg[8], 0x00);
  EXPECT_EQ(msg[10], 0xe0);
  EXPECT_EQ(msg[11], 0x3f);
  EXPECT_EQ(teleop::decode_frame_header(msg), h);
  EXPECT_EQ(msg[16], 0xff);
  EXPECT_THROW(teleop::decode_frame_header(std::span(msg).first(15)), IoError);
}

// ---- over the wire -----------------------------------------------------------------

class TeleopEpisode : public ::testing::Test {
 protected:
  TeleopEpisode() {
    cfg.scenarios = {"unused"};
    cfg.agent = "human";
    cfg.camera.width = 160;
    cfg.camera.height = 90;
    cfg.camera.fx = cfg.camera.fy = 80;
    cfg.camera.cx = 80;
    cfg.camera.cy = 45;
    cfg.out_dir.clear();
    scenario = load_scenario_file(fs::path(MRSIM_SOURCE_DIR) / "scenarios" / "empty.json", &assets);
  }

  static TeleopOptions lockstep() {
    TeleopOptions o;
    o.port = 0;
    o.lockstep = true;
    o.wait_for_client = 2.0;
    return o;
  }

  std::vector<json> run_scripted(const ScriptedClient::Script& script, std::vector<teleop::FrameHeader>* frames = nullptr) {
    TeleopServer server(lockstep());
    ScriptedClient client(server.port(), script);
    client.start();
    auto source = make_source(cfg, scenario);
    auto r = server.serve(cfg, scenario, 0, *source, assets);
    client.join();
    EXPECT_FALSE(r.report.error);
    EXPECT_TRUE(client.decoded_all);
    EXPECT_EQ(client.frames.size(), static_cast<std::size_t>(r.report.ticks));
    EXPECT_GE(client.texts.size(), 2u);
    if (client.texts.size() >= 2) {
      EXPECT_EQ(client.texts.front()["type"], "start");
      EXPECT_EQ(client.texts.back()["type"], "end");
    }
    if (frames) *frames = client.frames;
    std::vector<json> log;
    for (const auto& l : r.tick_log) log.push_back(json::parse(l));
    last_log = r.tick_log;
    last_texts = client.texts;
    last_report = r.report;
    return log;
  }

  RunConfig cfg;
  AssetLibrary assets;
  Scenario scenario;
  std::vector<std::string> last_log;
  std::vector<json> last_texts;
  EpisodeReport last_report;
};

TEST_F(TeleopEpisode, NoClientHoldsFullBrake) {
  cfg.time_limit = 3.0;
  TeleopOptions o;
  o.port = 0;
  TeleopServer server(o);
  auto source = make_source(cfg, scenario);
  const auto r = server.serve(cfg, scenario, 0, *source, assets);
  ASSERT_FALSE(r.report.error);
  EXPECT_EQ(r.report.ticks, 30);
  double prev = scenario.ego.speed;
  for (const auto& l : r.tick_log) {
    const auto j = json::parse(l);
    EXPECT_DOUBLE_EQ(j["target_speed"].get<double>(), 0.0);
    EXPECT_LE(j["ego"]["speed"].get<double>(), prev + 1e-12);
    prev = j["ego"]["speed"].get<double>();
  }
  EXPECT_DOUBLE_EQ(prev, 0.0);
  EXPECT_FALSE(r.report.time_to_goal < cfg.time_limit);
}

TEST_F(TeleopEpisode, CommandAppliesOnTheNextTick) {
  cfg.time_limit = 5.0;
  std::vector<teleop::FrameHeader> frames;
  const auto log = run_scripted([](const teleop::FrameHeader& h) { return cmd(h.tick >= 20 ? 1.0 : 0.0); }, &frames);
  ASSERT_GT(log.size(), 30u);
  // Reply to frame k lands before tick k+1's agent phase.
  EXPECT_DOUBLE_EQ(log[0]["target_speed"].get<double>(), 0.0);  // nothing received yet
  for (int k = 1; k <= 20; ++k) EXPECT_DOUBLE_EQ(log[k]["target_speed"].get<double>(), 2.0) << k;
  for (std::size_t k = 21; k < log.size(); ++k) EXPECT_DOUBLE_EQ(log[k]["target_speed"].get<double>(), 0.0) << k;
  EXPECT_FALSE(last_report.time_to_goal < cfg.time_limit);
  // Header speed and flags mirror the tick log.
  for (std::size_t k = 0; k < frames.size(); ++k) {
    EXPECT_EQ(frames[k].tick, k);
    EXPECT_FLOAT_EQ(frames[k].speed, static_cast<float>(log[k]["ego"]["speed"].get<double>()));
  }
  EXPECT_TRUE(frames.back().flags & teleop::kEnded);
}

TEST_F(TeleopEpisode, SilenceBeyondDeadlineStops) {
  cfg.time_limit = 5.0;
  const auto log = run_scripted([](const teleop::FrameHeader& h) { return h.tick < 10 ? cmd(0.0) : kIdle; });
  // Last command received before tick 10; live through tick 15 (0.5 s), braking from 16.
  for (int k = 1; k <= 15; ++k) EXPECT_DOUBLE_EQ(log[k]["target_speed"].get<double>(), 2.0) << k;
  for (std::size_t k = 16; k < log.size(); ++k) EXPECT_DOUBLE_EQ(log[k]["target_speed"].get<double>(), 0.0) << k;
  EXPECT_DOUBLE_EQ(log.back()["ego"]["speed"].get<double>(), 0.0);
}

TEST_F(TeleopEpisode, ReleasedBrakeReachesGoalLikeCruise) {
  run_scripted([](const teleop::FrameHeader&) { return cmd(0.0); });
  ASSERT_LT(last_report.time_to_goal, cfg.time_limit);
  // Same targets as a cruise agent from tick 1 on; tick 0 brakes, so it arrives later.
  ConstantCruiseAgent cruise(2.0);
  auto source = make_source(cfg, scenario);
  const auto ref = run_episode(cfg, scenario, 0, cruise, *source, assets);
  EXPECT_GT(last_report.time_to_goal, ref.report.time_to_goal);
  EXPECT_LT(last_report.time_to_goal, ref.report.time_to_goal + 1.0);
}

TEST_F(TeleopEpisode, ScriptedReplayIsDeterministic) {
  const auto script = [](const teleop::FrameHeader& h) {
    if (h.tick % 7 == 3) return kIdle;
    return json{{"type", "cmd"}, {"brake", 0.1 * (h.tick % 5)}, {"steer", 0.01 * (static_cast<int>(h.tick % 9) - 4)}}.dump();
  };
  cfg.time_limit = 6.0;
  run_scripted(script);
  const auto first = last_log;
  const auto first_report = to_json(last_report).dump();
  run_scripted(script);
  EXPECT_EQ(last_log, first);
  EXPECT_EQ(to_json(last_report).dump(), first_report);
}

TEST_F(TeleopEpisode, MalformedCommandGetsAnErrorFrame) {
  cfg.time_limit = 1.0;
  run_scripted([](const teleop::FrameHeader& h) { return h.tick == 2 ? std::string("{\"type\":\"cmd\",") : cmd(0.0); });
  int errors = 0;
  for (const auto& t : last_texts) errors += t["type"] == "error";
  EXPECT_EQ(errors, 1);
  // The bad reply is dropped; the previous command stays live.
  EXPECT_DOUBLE_EQ(json::parse(last_log[3])["target_speed"].get<double>(), 2.0);
}

TEST(TeleopServer, SecondDriverIsRejected) {
  TeleopOptions o;
  o.port = 0;
  TeleopServer server(o);
  ScriptedClient first(server.port(), [](const teleop::FrameHeader&) { return kIdle; });
  for (int i = 0; i < 200 && !server.has_client(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  ASSERT_TRUE(server.has_client());
  ScriptedClient second(server.port(), [](const teleop::FrameHeader&) { return kIdle; });
  const auto msg = second.read_text();
  EXPECT_EQ(msg["type"], "error");
}

TEST(TeleopServer, ErrorFrameForMalformedInput) {
  TeleopOptions o;
  o.port = 0;
  TeleopServer server(o);
  ScriptedClient client(server.port(), [](const teleop::FrameHeader&) { return kIdle; });
  for (int i = 0; i < 200 && !server.has_client(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  client.send("{oops");
  // Messages are validated by the agent on the sim thread.
  Mailbox& box = server.mailbox();
  for (int i = 0; i < 200 && box.received() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  ASSERT_EQ(box.received(), 1);
  const auto msgs = box.take();
  ASSERT_EQ(msgs.size(), 1u);
  EXPECT_TRUE(apply_command({}, msgs[0], 0, 0.6).error);
}

TEST(TeleopServer, PortInUseIsAnIoError) {
  TeleopOptions o;
  o.port = 0;
  TeleopServer a(o);
  TeleopOptions b;
  b.port = a.port();
  // reuse_address permits rebinding only once the first listener is gone.
  EXPECT_THROW(TeleopServer{b}, IoError);
}

}  // namespace
}  // namespace mrsim
