#include <gtest/gtest.h>

#include <random>

#include "mrsim/evaluation.hpp"
#include "oracles.hpp"

namespace mrsim {
namespace {

ImageRgb8 random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> B(0, 255);
  ImageRgb8 im(w, h);
  for (auto& p : im.data()) p = static_cast<std::uint8_t>(B(rng));
  return im;
}

ImageRgb8 smooth_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> P(0, 6.28);
  const double a = P(rng), b = P(rng), c = P(rng);
  ImageRgb8 im(w, h);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u)
      for (int ch = 0; ch < 3; ++ch)
        im.at(u, v, ch) = static_cast<std::uint8_t>(
            std::clamp(120 + 60 * std::sin(0.3 * u + a + ch) + 40 * std::cos(0.2 * v + b) + 10 * std::sin(u * v * 0.01 + c), 0.0, 235.0));
  return im;
}

TEST(Collision, Examples) {
  const Obb2 ego{Pose2(0, 0, 0), 1.35, 0.7};
  EXPECT_TRUE(check_collision(ego, {{"far", Obb2{Pose2(10, 0, 0), 1, 1}}}).empty());
  const auto ev = check_collision(ego, {{"same", ego}}, 7, 0.7);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].actor_id, "same");
  EXPECT_EQ(ev[0].tick, 7);
}

oracle::Box2 obox(const Obb2& b) { return {b.center.x, b.center.y, b.center.heading, b.half_length, b.half_width}; }

TEST(Collision, GrazingCornersMatchSamplingOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> H(-kPi, kPi), M(0.005, 0.03);
  std::bernoulli_distribution sign(0.5);
  int hits = 0;
  for (int i = 0; i < 200; ++i) {
    const Obb2 ego{Pose2(0, 0, H(rng)), 1.35, 0.7};
    // Actor corner placed a few millimetres inside or outside an ego corner.
    const Vec2 ego_corner = ego.center.to_world(Vec2(1.35, 0.7));
    const double ha = H(rng);
    const Vec2 off = Pose2(0, 0, ha).to_world(Vec2(-0.3, -0.3));
    const Vec2 nudge = ego.center.to_world(Vec2(sign(rng) ? M(rng) : -M(rng), sign(rng) ? M(rng) : -M(rng))) - ego.center.position();
    const Vec2 c = ego_corner - off + nudge;
    const Obb2 actor{Pose2(c.x(), c.y(), ha), 0.3, 0.3};
    const bool expected = oracle::boxes_overlap_sampled(obox(ego), obox(actor), 20000);
    hits += expected;
    ASSERT_EQ(!check_collision(ego, {{"a", actor}}).empty(), expected) << i;
  }
  EXPECT_GT(hits, 20);
  EXPECT_LT(hits, 180);
}

std::vector<PoseSample> constant_speed_log(double v, double dt, double limit) {
  std::vector<PoseSample> log;
  for (int k = 0; k * dt <= limit + 1e-9; ++k) log.push_back({k * dt, Pose2(v * k * dt, 0, 0)});
  return log;
}

TEST(TimeToGoal, ParkedAtEndIsZero) {
  const PlannedPath path({{0, 0}, {20, 0}});
  EXPECT_EQ(time_to_goal({{0.0, Pose2(19, 0, 0)}}, GoalRule::path_end_1p5m, path, std::nullopt), 0.0);
}

TEST(TimeToGoal, NeverMovesIsPenalty) {
  const PlannedPath path({{0, 0}, {50, 0}});
  EXPECT_EQ(time_to_goal(constant_speed_log(0.0, 0.1, 100), GoalRule::path_end_1p5m, path, std::nullopt), 100.0);
}

TEST(TimeToGoal, ConstantSpeedMatchesTickEnumeration) {
  const PlannedPath path({{0, 0}, {20, 0}});
  double expected = -1;
  for (int k = 0;; ++k) {
    if (20.0 - 2.0 * k * 0.05 <= 1.5) {
      expected = k * 0.05;
      break;
    }
  }
  EXPECT_NEAR(expected, 9.25, 0.051);
  EXPECT_EQ(time_to_goal(constant_speed_log(2.0, 0.05, 100), GoalRule::path_end_1p5m, path, std::nullopt), expected);
}

TEST(TimeToGoal, StaticObstacleRule) {
  const PlannedPath path({{0, 0}, {40, 0}});
  const auto log = constant_speed_log(2.0, 0.1, 100);
  EXPECT_NEAR(time_to_goal(log, GoalRule::near_static_obstacle_5m, path, Vec2(20, 0)), 7.5, 1e-9);
  EXPECT_THROW(time_to_goal(log, GoalRule::near_static_obstacle_5m, path, std::nullopt), ValidationError);
}

TEST(TimeToGoal, FasterLogNeverLater) {
  const PlannedPath path({{0, 0}, {30, 0}});
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> V(0, 3), S(0.3, 1.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<PoseSample> log;
    double x = 0;
    for (int k = 0; k <= 1000; ++k) {
      log.push_back({k * 0.1, Pose2(x, 0, 0)});
      x += V(rng) * 0.1;
    }
    auto fast = log;
    const double f = S(rng);
    for (auto& s : fast) s.t *= f;
    ASSERT_LE(time_to_goal(fast, GoalRule::path_end_1p5m, path, std::nullopt),
              time_to_goal(log, GoalRule::path_end_1p5m, path, std::nullopt));
  }
}

EpisodeReport rep(std::string agent, std::string kind, bool collided, double t) {
  EpisodeReport r;
  r.agent = std::move(agent);
  r.kind = std::move(kind);
  r.collided = collided;
  r.time_to_goal = t;
  return r;
}

TEST(Aggregate, Examples) {
  std::vector<EpisodeReport> rs;
  for (int i = 0; i < 8; ++i) rs.push_back(rep("modular", "jaywalker", i == 3, 30));
  EXPECT_EQ(aggregate(rs).cells.at({"modular", "jaywalker"}).collision_rate, 0.125);

  std::vector<EpisodeReport> all{rep("c", "k", true, 1), rep("c", "k", true, 2)};
  EXPECT_EQ(aggregate(all).cells.at({"c", "k"}).collision_rate, 1.0);

  std::vector<EpisodeReport> times{rep("c", "k", false, 20), rep("c", "k", false, 100)};
  EXPECT_EQ(aggregate(times).cells.at({"c", "k"}).mean_time, 60.0);

  EXPECT_THROW(aggregate({}), ValidationError);
}

TEST(Aggregate, InvariantUnderReordering) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> T(1, 100);
  std::bernoulli_distribution C(0.3);
  std::vector<EpisodeReport> rs;
  for (int i = 0; i < 40; ++i) rs.push_back(rep(i % 2 ? "a" : "b", i % 3 ? "x" : "y", C(rng), T(rng)));
  const auto base = to_json(aggregate(rs)).dump();
  for (int k = 0; k < 20; ++k) {
    std::shuffle(rs.begin(), rs.end(), rng);
    ASSERT_EQ(to_json(aggregate(rs)).dump(), base);
  }
}

TEST(Aggregate, TextTableLayout) {
  std::vector<EpisodeReport> rs{rep("modular", "static_obstacle", false, 53.33), rep("modular", "jaywalker", true, 34.0),
                                rep("constant", "jaywalker", true, 12.0)};
  const auto text = to_text(aggregate(rs));
  EXPECT_NE(text.find("Static Obstacle"), std::string::npos);
  EXPECT_NE(text.find("Jaywalker"), std::string::npos);
  EXPECT_NE(text.find("53.33"), std::string::npos);
  EXPECT_LT(text.find("Static Obstacle"), text.find("Jaywalker"));
  // constant agent has no static-obstacle cell
  const auto line = text.substr(text.find("\nconstant"));
  EXPECT_NE(line.find('-'), std::string::npos);
}

TEST(EpisodeReportJson, RoundTrip) {
  EpisodeReport r = rep("modular", "jaywalker", true, 42.5);
  r.scenario = "jaywalker";
  r.seed = 5;
  r.hyper_params = {{"trigger_distance", 10}};
  r.events.push_back({3, 0.3, "walker", Obb2{Pose2(1, 2, 0.5), 1.35, 0.7}, Obb2{Pose2(1.5, 2, 0), 0.2, 0.2}});
  r.collision_ticks = 4;
  r.ticks = 1000;
  const auto j = to_json(r);
  EXPECT_EQ(to_json(episode_report_from_json(nlohmann::json::parse(j.dump()))).dump(), j.dump());
}

TEST(Psnr, Examples) {
  const auto a = random_image(16, 16, 1);
  EXPECT_EQ(psnr(a, a), 99.0);
  ImageRgb8 black(8, 8, 0), white(8, 8, 255), grey(8, 8, 16);
  EXPECT_NEAR(psnr(black, white), 0.0, 1e-12);
  EXPECT_NEAR(psnr(black, grey), 20 * std::log10(255.0 / 16.0), 1e-12);
  EXPECT_NEAR(psnr(black, grey), 24.05, 0.005);
  EXPECT_THROW(psnr(black, ImageRgb8(8, 9)), ValidationError);
}

TEST(Metrics, IdentitiesOnRandomImages) {
  for (int i = 0; i < 20; ++i) {
    const auto a = random_image(20 + i, 15 + 2 * i, 100 + i);
    ASSERT_EQ(psnr(a, a), kPsnrCap);
    ASSERT_EQ(ssim(a, a), 1.0);
    ASSERT_EQ(outlier_pct(a, a), 0.0);
  }
}

TEST(Metrics, Symmetric) {
  for (int i = 0; i < 10; ++i) {
    const auto a = random_image(24, 24, 200 + i), b = smooth_image(24, 24, 300 + i);
    ASSERT_EQ(psnr(a, b), psnr(b, a));
    ASSERT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  }
}

TEST(Ssim, ConstantOffsetMatchesReference) {
  const auto a = smooth_image(32, 32, 4);
  ImageRgb8 b = a;
  for (auto& p : b.data()) p = static_cast<std::uint8_t>(p + 10);
  const double ref = oracle::ssim_reference(a, b);
  EXPECT_LT(ref, 1.0);
  EXPECT_NEAR(ssim(a, b), ref, 1e-6);
}

TEST(Ssim, NoisePairNearZero) {
  const auto a = random_image(48, 40, 5), b = random_image(48, 40, 6);
  const double ref = oracle::ssim_reference(a, b);
  EXPECT_NEAR(ref, 0.0, 0.1);
  EXPECT_NEAR(ssim(a, b), ref, 1e-6);
}

TEST(Ssim, RejectsSmallImages) {
  ImageRgb8 a(10, 30);
  EXPECT_THROW(ssim(a, a), ValidationError);
}

TEST(Outlier, Examples) {
  ImageRgb8 a(10, 10, 100), b = a;
  for (int i = 0; i < 10; ++i)
    for (int c = 0; c < 3; ++c) b.at(i, 3, c) = 130;
  EXPECT_EQ(outlier_pct(a, b), 10.0);
  ImageRgb8 c(10, 10, 125);
  EXPECT_EQ(outlier_pct(a, c), 0.0);
  // Mean error exactly at the threshold is not an outlier; just above is.
  ImageRgb8 d(1, 1, 0), e(1, 1, 0);
  e.at(0, 0, 0) = 76;
  e.at(0, 0, 1) = 0;
  e.at(0, 0, 2) = 1;  // mean 25.67
  EXPECT_EQ(outlier_pct(d, e), 100.0);
}

TEST(RealityGap, Report) {
  const auto a = smooth_image(32, 24, 9);
  const auto r = reality_gap(a, a);
  EXPECT_EQ(r.psnr, kPsnrCap);
  EXPECT_EQ(r.ssim, 1.0);
  EXPECT_EQ(r.outlier_pct, 0.0);
  EXPECT_EQ(r.mae[0], 0.0);
}

TEST(Latency, Examples) {
  std::vector<TickTiming> log(20, TickTiming{50.0, 50.0, std::nullopt});
  const auto r = latency_report(log);
  EXPECT_EQ(r.total.mean_ms, 100.0);
  EXPECT_EQ(r.fps, 10.0);

  const auto one = latency_report({TickTiming{12.5, std::nullopt, std::nullopt}});
  EXPECT_EQ(one.render.mean_ms, 12.5);
  EXPECT_EQ(one.render.p95_ms, 12.5);
  EXPECT_THROW(latency_report({}), ValidationError);
}

TEST(Latency, OfflineRenderRowFixture) {
  // Render-only log whose samples average to the published offline figure.
  std::vector<TickTiming> log;
  for (double ms : {41.0, 46.0, 43.5, 42.0, 45.0}) log.push_back({ms, std::nullopt, std::nullopt});
  const auto r = latency_report(log);
  EXPECT_NEAR(r.render.mean_ms, 43.5, 1e-12);
  EXPECT_EQ(r.render.p95_ms, 46.0);
  const auto table = latency_table({{"offline", r}});
  EXPECT_NE(table.find("43.5ms"), std::string::npos);
  EXPECT_NE(table.find("Relative %"), std::string::npos);
}

TEST(Latency, NearestRankPercentile) {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(percentile(v, 95), 95.0);
  EXPECT_EQ(percentile({3, 1, 2}, 95), 3.0);
}

TEST(Latency, MergeMatchesPooledSamples) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> ms(1.0, 30.0);
  std::vector<TickTiming> all;
  std::vector<LatencyReport> runs;
  for (int r = 0; r < 4; ++r) {
    std::vector<TickTiming> run;
    for (int i = 0; i < 10 + 7 * r; ++i) run.push_back({ms(rng), ms(rng), ms(rng)});
    all.insert(all.end(), run.begin(), run.end());
    runs.push_back(latency_report(run));
  }
  const auto pooled = latency_report(all);
  const auto merged = merge_latency(runs);
  EXPECT_NEAR(merged.render.mean_ms, pooled.render.mean_ms, 1e-9);
  EXPECT_NEAR(merged.total.mean_ms, pooled.total.mean_ms, 1e-9);
  EXPECT_EQ(merged.total.samples, pooled.total.samples);
  EXPECT_NEAR(merged.fps, pooled.fps, 1e-9);
  EXPECT_GE(merged.total.p95_ms, pooled.total.p95_ms);
  const auto back = latency_report_from_json(nlohmann::json::parse(to_json(merged).dump()));
  EXPECT_DOUBLE_EQ(back.agent.mean_ms, merged.agent.mean_ms);
  EXPECT_EQ(back.control.samples, merged.control.samples);
}

}  // namespace
}  // namespace mrsim
