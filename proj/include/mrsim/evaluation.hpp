#pragma once

// Episode scoring (collisions, time-to-goal, aggregation), latency summaries
// and image-level reality-gap metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrsim/geometry.hpp"
#include "mrsim/image.hpp"
#include "mrsim/scenario.hpp"

namespace mrsim {

/// Time recorded for an episode that never reaches its goal; also the episode
/// length limit, so "not reached" and "penalized" coincide.
inline constexpr double kGoalPenalty = 100.0;

// ---- collisions ----------------------------------------------------------------

struct CollisionEvent {
  long tick = 0;
  double time = 0.0;
  std::string actor_id;
  Obb2 ego;
  Obb2 actor;
};

struct ActorBox {
  std::string id;
  Obb2 box;
};

inline std::vector<CollisionEvent> check_collision(const Obb2& ego, const std::vector<ActorBox>& actors, long tick = 0,
                                                   double time = 0.0) {
  std::vector<CollisionEvent> out;
  for (const auto& a : actors)
    if (obb_overlap(ego, a.box)) out.push_back({tick, time, a.id, ego, a.box});
  return out;
}

// ---- goal ------------------------------------------------------------------------

struct PoseSample {
  double t = 0.0;
  Pose2 pose;
};

inline bool goal_reached(const Pose2& ego, GoalRule rule, const PlannedPath& path, const std::optional<Vec2>& obstacle) {
  if (rule == GoalRule::near_static_obstacle_5m) {
    if (!obstacle) throw ValidationError("goal rule near_static_obstacle_5m needs a static obstacle");
    return (ego.position() - *obstacle).norm() <= 5.0;
  }
  return (ego.position() - path.back()).norm() <= 1.5;
}

/// First sample time at which the goal condition holds, or the penalty when
/// it never does within `limit`. Distances are from the ego footprint centre.
inline double time_to_goal(const std::vector<PoseSample>& log, GoalRule rule, const PlannedPath& path,
                           const std::optional<Vec2>& obstacle, double limit = kGoalPenalty) {
  if (rule == GoalRule::near_static_obstacle_5m && !obstacle)
    throw ValidationError("goal rule near_static_obstacle_5m needs a static obstacle");
  double last = -kInf;
  for (const auto& s : log) {
    if (s.t < last) throw ValidationError("time_to_goal: log is not time-ordered");
    last = s.t;
    if (s.t > limit) break;
    if (goal_reached(s.pose, rule, path, obstacle)) return s.t;
  }
  return kGoalPenalty;
}

// ---- latency ---------------------------------------------------------------------

struct TickTiming {
  double render_ms = 0.0;
  std::optional<double> agent_ms;
  std::optional<double> control_ms;
  double total_ms() const { return render_ms + agent_ms.value_or(0.0) + control_ms.value_or(0.0); }
};

struct StageStats {
  double mean_ms = 0.0;
  double p95_ms = 0.0;
  long samples = 0;
};

/// Nearest-rank percentile.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ValidationError("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline StageStats stage_stats(const std::vector<double>& v) {
  if (v.empty()) return {};
  double sum = 0.0;
  for (double x : v) sum += x;
  return {sum / static_cast<double>(v.size()), percentile(v, 95.0), static_cast<long>(v.size())};
}

struct LatencyReport {
  StageStats render, agent, control, total;
  double fps = 0.0;
  bool has_agent() const { return agent.samples > 0; }
  bool has_control() const { return control.samples > 0; }
};

inline LatencyReport latency_report(const std::vector<TickTiming>& log) {
  if (log.empty()) throw ValidationError("latency_report: empty timing log");
  std::vector<double> r, a, c, t;
  for (const auto& s : log) {
    r.push_back(s.render_ms);
    if (s.agent_ms) a.push_back(*s.agent_ms);
    if (s.control_ms) c.push_back(*s.control_ms);
    t.push_back(s.total_ms());
  }
  LatencyReport out{stage_stats(r), stage_stats(a), stage_stats(c), stage_stats(t), 0.0};
  out.fps = out.total.mean_ms > 0.0 ? 1000.0 / out.total.mean_ms : kInf;
  return out;
}

/// Runtime breakdown table: one row per configuration, mean milliseconds per
/// stage, and the render share of the end-to-end time.
inline std::string latency_table(const std::vector<std::pair<std::string, LatencyReport>>& rows) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(20) << "" << std::right << std::setw(10) << "Render" << std::setw(10) << "Agent"
     << std::setw(10) << "Control" << std::setw(10) << "Total" << std::setw(12) << "Relative %" << std::setw(8)
     << "FPS" << '\n';
  auto cell = [&](bool present, double ms) {
    if (present) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(1) << ms << "ms";
      os << std::setw(10) << c.str();
    } else {
      os << std::setw(10) << "-";
    }
  };
  for (const auto& [label, r] : rows) {
    os << std::left << std::setw(20) << label << std::right;
    cell(true, r.render.mean_ms);
    cell(r.has_agent(), r.agent.mean_ms);
    cell(r.has_control(), r.control.mean_ms);
    cell(true, r.total.mean_ms);
    os << std::setw(12) << std::setprecision(2) << 100.0 * r.render.mean_ms / r.total.mean_ms << std::setw(8)
       << std::setprecision(1) << r.fps << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const StageStats& s) {
  return {{"mean_ms", s.mean_ms}, {"p95_ms", s.p95_ms}, {"samples", s.samples}};
}

inline nlohmann::ordered_json to_json(const LatencyReport& r) {
  nlohmann::ordered_json j;
  j["render"] = to_json(r.render);
  if (r.has_agent()) j["agent"] = to_json(r.agent);
  if (r.has_control()) j["control"] = to_json(r.control);
  j["total"] = to_json(r.total);
  j["fps"] = r.fps;
  return j;
}

inline StageStats stage_stats_from_json(const nlohmann::json& j) {
  return {j.at("mean_ms").get<double>(), j.at("p95_ms").get<double>(), j.at("samples").get<long>()};
}

inline LatencyReport latency_report_from_json(const nlohmann::json& j) {
  LatencyReport r;
  r.render = stage_stats_from_json(j.at("render"));
  if (j.contains("agent")) r.agent = stage_stats_from_json(j["agent"]);
  if (j.contains("control")) r.control = stage_stats_from_json(j["control"]);
  r.total = stage_stats_from_json(j.at("total"));
  r.fps = j.at("fps").get<double>();
  return r;
}

/// Pools several runs: sample-weighted means. Percentiles cannot be pooled from
/// summaries, so p95 is the largest per-run p95 (an upper bound).
inline LatencyReport merge_latency(const std::vector<LatencyReport>& runs) {
  if (runs.empty()) throw ValidationError("merge_latency: nothing to merge");
  auto pool = [&](StageStats LatencyReport::*stage) {
    StageStats out;
    double sum = 0.0;
    for (const auto& r : runs) {
      const auto& s = r.*stage;
      sum += s.mean_ms * static_cast<double>(s.samples);
      out.samples += s.samples;
      out.p95_ms = std::max(out.p95_ms, s.p95_ms);
    }
    if (out.samples > 0) out.mean_ms = sum / static_cast<double>(out.samples);
    return out;
  };
  LatencyReport m{pool(&LatencyReport::render), pool(&LatencyReport::agent), pool(&LatencyReport::control),
                  pool(&LatencyReport::total), 0.0};
  m.fps = m.total.mean_ms > 0.0 ? 1000.0 / m.total.mean_ms : kInf;
  return m;
}

// ---- episode reports ---------------------------------------------------------------

struct EpisodeReport {
  std::string scenario;
  std::string kind;
  std::string agent;
  std::map<std::string, double> hyper_params;
  std::uint64_t seed = 0;
  bool collided = false;
  std::vector<CollisionEvent> events;  // first contact per actor
  long collision_ticks = 0;            // ticks with any contact
  double time_to_goal = kGoalPenalty;
  long ticks = 0;
  std::optional<std::string> error;
  // Wall-clock figures; kept out of report.json so the report stays byte-stable.
  std::optional<LatencyReport> latency;
};

inline nlohmann::ordered_json to_json(const Obb2& b) {
  return {{"x", b.center.x}, {"y", b.center.y}, {"heading", b.center.heading}, {"half_length", b.half_length},
          {"half_width", b.half_width}};
}

inline nlohmann::ordered_json to_json(const EpisodeReport& r) {
  nlohmann::ordered_json j;
  j["scenario"] = r.scenario;
  j["kind"] = r.kind;
  j["agent"] = r.agent;
  j["hyper_params"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.hyper_params) j["hyper_params"][k] = v;
  j["seed"] = r.seed;
  j["collided"] = r.collided;
  j["collision_ticks"] = r.collision_ticks;
  auto events = nlohmann::ordered_json::array();
  for (const auto& e : r.events)
    events.push_back({{"tick", e.tick}, {"time", e.time}, {"actor_id", e.actor_id}, {"ego", to_json(e.ego)},
                      {"actor", to_json(e.actor)}});
  j["events"] = events;
  j["time_to_goal"] = r.time_to_goal;
  j["ticks"] = r.ticks;
  if (r.error) j["error"] = *r.error;
  return j;
}

inline EpisodeReport episode_report_from_json(const nlohmann::json& j) {
  EpisodeReport r;
  try {
    r.scenario = j.at("scenario").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.agent = j.at("agent").get<std::string>();
    for (const auto& [k, v] : j.at("hyper_params").items()) r.hyper_params[k] = v.get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.collided = j.at("collided").get<bool>();
    r.collision_ticks = j.value("collision_ticks", 0L);
    for (const auto& e : j.at("events")) {
      CollisionEvent ev;
      ev.tick = e.at("tick").get<long>();
      ev.time = e.at("time").get<double>();
      ev.actor_id = e.at("actor_id").get<std::string>();
      for (auto [box, key] : {std::pair{&ev.ego, "ego"}, std::pair{&ev.actor, "actor"}}) {
        const auto& b = e.at(key);
        *box = Obb2{Pose2(b.at("x").get<double>(), b.at("y").get<double>(), b.at("heading").get<double>()),
                    b.at("half_length").get<double>(), b.at("half_width").get<double>()};
      }
      r.events.push_back(ev);
    }
    r.time_to_goal = j.at("time_to_goal").get<double>();
    r.ticks = j.at("ticks").get<long>();
    if (j.contains("error")) r.error = j["error"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("episode report: ") + e.what());
  }
  return r;
}

// ---- benchmark table -----------------------------------------------------------------

struct BenchmarkCell {
  double collision_rate = 0.0;
  double mean_time = 0.0;
  long runs = 0;
  long collided = 0;
  long failed = 0;  // episodes that ended in an error; counted as runs
};

struct BenchmarkTable {
  // (agent, scenario kind) -> cell
  std::map<std::pair<std::string, std::string>, BenchmarkCell> cells;
};

/// Rates and means per (agent, kind). Errored episodes count as runs with the
/// penalty time and no collision; their count is reported separately.
inline BenchmarkTable aggregate(const std::vector<EpisodeReport>& reports) {
  if (reports.empty()) throw ValidationError("aggregate: no reports");
  std::map<std::pair<std::string, std::string>, std::vector<const EpisodeReport*>> groups;
  for (const auto& r : reports) groups[{r.agent, r.kind}].push_back(&r);
  BenchmarkTable t;
  for (const auto& [key, rs] : groups) {
    BenchmarkCell c;
    // Sum in a canonical order so the mean does not depend on report order.
    std::vector<double> times;
    for (const auto* r : rs) {
      ++c.runs;
      c.collided += r->collided ? 1 : 0;
      c.failed += r->error ? 1 : 0;
      times.push_back(r->time_to_goal);
    }
    std::sort(times.begin(), times.end());
    double sum = 0.0;
    for (double x : times) sum += x;
    c.collision_rate = static_cast<double>(c.collided) / static_cast<double>(c.runs);
    c.mean_time = sum / static_cast<double>(c.runs);
    t.cells[key] = c;
  }
  return t;
}

inline nlohmann::ordered_json to_json(const BenchmarkTable& t) {
  auto cells = nlohmann::ordered_json::array();
  for (const auto& [key, c] : t.cells)
    cells.push_back({{"agent", key.first},
                     {"kind", key.second},
                     {"collision_rate", c.collision_rate},
                     {"mean_time_to_goal", c.mean_time},
                     {"runs", c.runs},
                     {"collided", c.collided},
                     {"failed", c.failed}});
  return {{"cells", cells}};
}

inline std::string scenario_column_title(const std::string& kind) {
  if (kind == "static_obstacle") return "Static Obstacle";
  if (kind == "traffic_light_violation") return "Traffic Light Violation";
  if (kind == "jaywalker") return "Jaywalker";
  if (kind == "jaywalker_occluded") return "Jaywalker (occluded)";
  return kind;
}

/// Aligned text: one row per agent, a (collision rate, time) column pair per
/// scenario kind. Static-obstacle time is time-to-obstacle.
inline std::string to_text(const BenchmarkTable& t) {
  std::vector<std::string> agents, kinds;
  for (const auto& [key, c] : t.cells) {
    if (std::find(agents.begin(), agents.end(), key.first) == agents.end()) agents.push_back(key.first);
    if (std::find(kinds.begin(), kinds.end(), key.second) == kinds.end()) kinds.push_back(key.second);
  }
  // Fixed column order for the known kinds, others after them alphabetically.
  const std::vector<std::string> order = {"static_obstacle", "traffic_light_violation", "jaywalker",
                                          "jaywalker_occluded"};
  std::stable_sort(kinds.begin(), kinds.end(), [&](const std::string& a, const std::string& b) {
    const auto ia = std::find(order.begin(), order.end(), a) - order.begin();
    const auto ib = std::find(order.begin(), order.end(), b) - order.begin();
    return ia < ib;
  });

  std::size_t agent_w = 10;
  for (const auto& a : agents) agent_w = std::max(agent_w, a.size() + 2);
  std::vector<std::size_t> width;
  for (const auto& k : kinds) width.push_back(std::max<std::size_t>(24, scenario_column_title(k).size() + 2));

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(agent_w)) << "";
  for (std::size_t i = 0; i < kinds.size(); ++i)
    os << "| " << std::setw(static_cast<int>(width[i])) << scenario_column_title(kinds[i]);
  os << '\n' << std::setw(static_cast<int>(agent_w)) << "Agent";
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const std::string time_label = kinds[i] == "static_obstacle" ? "Time to Obst." : "Time to Goal";
    const int half = static_cast<int>(width[i] / 2);
    os << "| " << std::setw(half) << "Coll. Rate" << std::setw(static_cast<int>(width[i]) - half) << time_label;
  }
  os << '\n' << std::string(agent_w, '-');
  for (std::size_t i = 0; i < kinds.size(); ++i) os << "+-" << std::string(width[i], '-');
  os << '\n';
  for (const auto& a : agents) {
    os << std::setw(static_cast<int>(agent_w)) << a;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      const int half = static_cast<int>(width[i] / 2);
      const auto it = t.cells.find({a, kinds[i]});
      if (it == t.cells.end()) {
        os << "| " << std::setw(half) << "-" << std::setw(static_cast<int>(width[i]) - half) << "-";
        continue;
      }
      std::ostringstream rate, time;
      rate << std::setprecision(3) << it->second.collision_rate;
      time << std::fixed << std::setprecision(2) << it->second.mean_time;
      os << "| " << std::setw(half) << rate.str() << std::setw(static_cast<int>(width[i]) - half) << time.str();
    }
    os << '\n';
  }
  return os.str();
}

// ---- image metrics -------------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const ImageRgb8& a, const ImageRgb8& b) {
  require_same_size(a, b, "psnr");
  const auto da = a.data(), db = b.data();
  if (da.empty()) throw ValidationError("psnr: empty image");
  double sse = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - db[i];
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / (sse / static_cast<double>(da.size()))));
}

/// Normalised 11x11 Gaussian (sigma 1.5) as a separable 1-D kernel.
inline const std::array<double, 11>& ssim_kernel() {
  static const std::array<double, 11> k = [] {
    std::array<double, 11> g{};
    double s = 0.0;
    for (int i = 0; i < 11; ++i) s += g[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
    for (auto& x : g) x /= s;
    return g;
  }();
  return k;
}

inline ImageD luma_image(const ImageRgb8& a) {
  ImageD y(a.width(), a.height());
  for (int v = 0; v < a.height(); ++v)
    for (int u = 0; u < a.width(); ++u) y.at(u, v) = luma601(a.at(u, v, 0), a.at(u, v, 1), a.at(u, v, 2));
  return y;
}

/// Mean SSIM over every fully contained 11x11 window of the BT.601 luma.
inline double ssim(const ImageRgb8& a, const ImageRgb8& b) {
  require_same_size(a, b, "ssim");
  if (a.width() < 11 || a.height() < 11) throw ValidationError("ssim: image smaller than the 11x11 window");
  const ImageD ya = luma_image(a), yb = luma_image(b);
  const int W = a.width(), H = a.height(), OW = W - 10, OH = H - 10;
  const auto& k = ssim_kernel();

  // Horizontal pass over five moment images, then vertical pass per output.
  std::array<ImageD, 5> hx;
  for (auto& im : hx) im = ImageD(OW, H);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < OW; ++u) {
      double m[5] = {0, 0, 0, 0, 0};
      for (int i = 0; i < 11; ++i) {
        const double p = ya.at(u + i, v), q = yb.at(u + i, v);
        m[0] += k[i] * p;
        m[1] += k[i] * q;
        m[2] += k[i] * (p * p);
        m[3] += k[i] * (q * q);
        m[4] += k[i] * (p * q);
      }
      for (int c = 0; c < 5; ++c) hx[c].at(u, v) = m[c];
    }
  }
  constexpr double C1 = (0.01 * 255) * (0.01 * 255), C2 = (0.03 * 255) * (0.03 * 255);
  double total = 0.0;
  for (int v = 0; v < OH; ++v) {
    for (int u = 0; u < OW; ++u) {
      double m[5] = {0, 0, 0, 0, 0};
      for (int i = 0; i < 11; ++i)
        for (int c = 0; c < 5; ++c) m[c] += k[i] * hx[c].at(u, v + i);
      const double mu_a = m[0], mu_b = m[1];
      const double va = m[2] - mu_a * mu_a, vb = m[3] - mu_b * mu_b, cov = m[4] - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (va + vb + C2));
    }
  }
  return total / (static_cast<double>(OW) * OH);
}

inline double outlier_pct(const ImageRgb8& a, const ImageRgb8& b, double threshold = 25.5) {
  require_same_size(a, b, "outlier_pct");
  const long n = static_cast<long>(a.width()) * a.height();
  if (n == 0) throw ValidationError("outlier_pct: empty image");
  long outliers = 0;
  for (int v = 0; v < a.height(); ++v) {
    for (int u = 0; u < a.width(); ++u) {
      double e = 0.0;
      for (int c = 0; c < 3; ++c) e += std::abs(static_cast<double>(a.at(u, v, c)) - b.at(u, v, c));
      if (e / 3.0 > threshold) ++outliers;
    }
  }
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

inline std::array<double, 3> mae_per_channel(const ImageRgb8& a, const ImageRgb8& b) {
  require_same_size(a, b, "mae");
  std::array<double, 3> s{0, 0, 0};
  for (int v = 0; v < a.height(); ++v)
    for (int u = 0; u < a.width(); ++u)
      for (int c = 0; c < 3; ++c) s[c] += std::abs(static_cast<double>(a.at(u, v, c)) - b.at(u, v, c));
  const double n = static_cast<double>(a.width()) * a.height();
  for (auto& x : s) x /= n;
  return s;
}

struct RealityGapReport {
  double psnr = kPsnrCap;
  double ssim = 1.0;
  double outlier_pct = 0.0;
  std::array<double, 3> mae{0, 0, 0};
  long frames = 0;
};

inline RealityGapReport reality_gap(const ImageRgb8& real, const ImageRgb8& sim) {
  return {psnr(real, sim), ssim(real, sim), outlier_pct(real, sim), mae_per_channel(real, sim), 1};
}

/// Frame-averaged gap over paired images.
inline RealityGapReport reality_gap(const std::vector<std::pair<ImageRgb8, ImageRgb8>>& pairs) {
  if (pairs.empty()) throw ValidationError("reality_gap: no frame pairs");
  RealityGapReport acc{0.0, 0.0, 0.0, {0, 0, 0}, 0};
  for (const auto& [real, sim] : pairs) {
    const auto r = reality_gap(real, sim);
    acc.psnr += r.psnr;
    acc.ssim += r.ssim;
    acc.outlier_pct += r.outlier_pct;
    for (int c = 0; c < 3; ++c) acc.mae[c] += r.mae[c];
    ++acc.frames;
  }
  const double n = static_cast<double>(acc.frames);
  acc.psnr /= n;
  acc.ssim /= n;
  acc.outlier_pct /= n;
  for (auto& x : acc.mae) x /= n;
  return acc;
}

inline nlohmann::ordered_json to_json(const RealityGapReport& r) {
  return {{"psnr_db", r.psnr}, {"ssim", r.ssim}, {"outlier_pct", r.outlier_pct},
          {"mae", {r.mae[0], r.mae[1], r.mae[2]}}, {"frames", r.frames}};
}

}  // namespace mrsim
