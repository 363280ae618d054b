#pragma once

// Closed-loop episode runner and suite driver.
//
// One tick: fetch frame -> trigger -> actor poses -> insertion render ->
// agent -> (PI + Stanley -> plant -> collision / goal) per plant substep.
// Time is simulation time; wall clock only paces --realtime runs and fills
// the latency figures, which are written apart from the deterministic logs.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mrsim/autonomy.hpp"
#include "mrsim/bridge.hpp"
#include "mrsim/compositor.hpp"
#include "mrsim/evaluation.hpp"
#include "mrsim/frame_source.hpp"
#include "mrsim/plant.hpp"
#include "mrsim/scenario.hpp"

namespace mrsim {

namespace fs = std::filesystem;

/// Default closed-loop camera: 320x180 with a 90 degree horizontal field of
/// view, wide enough to keep a walker converging on the ego lane in frame.
inline CameraModel fixture_camera() {
  CameraModel c;
  c.width = 320;
  c.height = 180;
  c.fx = c.fy = 160.0;
  c.cx = 160.0;
  c.cy = 90.0;
  return c;
}

struct RunConfig {
  std::vector<fs::path> scenarios;
  std::string agent = "modular";  // modular | constant | external=HOST:PORT | human
  std::vector<std::uint64_t> seeds{0};
  double tick_hz = 10.0;
  fs::path out_dir = "out";
  std::optional<fs::path> stream;  // replay source; synthetic when empty
  bool realtime = false;
  bool dump_frames = false;
  double time_limit = kGoalPenalty;
  int jobs = 1;
  // Suite grid: every combination of these hyper-parameter values is run.
  std::map<std::string, std::vector<double>> grid;

  PlantParams plant;
  ControllerGains gains;
  CompositorConfig compositor;
  ModularConfig modular;
  CameraModel camera = fixture_camera();
  double camera_height = 1.5;
  double camera_pitch = 0.1;    // rad, downward
  double camera_forward = 0.0;  // m ahead of the plant pose
  double external_timeout = 0.2;
  bool external_frames = false;

  void validate() const {
    if (!(tick_hz > 0.0)) throw ValidationError("tick_hz must be positive");
    if (scenarios.empty()) throw ValidationError("at least one scenario is required");
    if (seeds.empty()) throw ValidationError("at least one seed is required");
    if (!(time_limit > 0.0)) throw ValidationError("time_limit must be positive");
    if (jobs < 1) throw ValidationError("jobs must be >= 1");
    plant.validate();
    gains.validate();
    camera.validate();
    const double n = 1.0 / (tick_hz * plant.substep);
    if (std::abs(n - std::round(n)) > 1e-9 || std::round(n) < 1)
      throw ValidationError("tick period must be a whole number of plant substeps");
    if (!(agent == "modular" || agent == "constant" || agent == "constant_cruise" || agent == "human" ||
          agent.starts_with("external=")))
      throw ValidationError("unknown agent '" + agent + "'");
    for (const auto& [k, v] : grid)
      if (v.empty()) throw ValidationError("grid." + k + " has no values");
  }

  int substeps() const { return static_cast<int>(std::lround(1.0 / (tick_hz * plant.substep))); }
};

namespace detail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

}  // namespace detail

/// Reads a run/suite configuration. Relative scenario and stream paths are
/// resolved against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  using detail::maybe;
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  if (j.contains("scenarios")) {
    if (!j["scenarios"].is_array()) throw ValidationError("config.scenarios must be an array");
    for (const auto& s : j["scenarios"]) {
      if (!s.is_string()) throw ValidationError("config.scenarios entries must be paths");
      c.scenarios.push_back(resolve(s.get<std::string>()));
    }
  }
  maybe(j, "agent", c.agent, "config");
  maybe(j, "seeds", c.seeds, "config");
  maybe(j, "tick_hz", c.tick_hz, "config");
  if (j.contains("out")) c.out_dir = resolve(j["out"].get<std::string>());
  if (j.contains("stream") && !j["stream"].is_null()) c.stream = resolve(j["stream"].get<std::string>());
  maybe(j, "realtime", c.realtime, "config");
  maybe(j, "dump_frames", c.dump_frames, "config");
  maybe(j, "time_limit", c.time_limit, "config");
  maybe(j, "jobs", c.jobs, "config");
  maybe(j, "grid", c.grid, "config");
  if (const auto it = j.find("plant"); it != j.end()) {
    maybe(*it, "wheelbase", c.plant.wheelbase, "plant");
    maybe(*it, "v_max", c.plant.v_max, "plant");
    maybe(*it, "steer_max", c.plant.steer_max, "plant");
    maybe(*it, "accel_max", c.plant.accel_max, "plant");
    maybe(*it, "decel_max", c.plant.decel_max, "plant");
    maybe(*it, "latency", c.plant.latency, "plant");
    maybe(*it, "substep", c.plant.substep, "plant");
    maybe(*it, "half_length", c.plant.half_length, "plant");
    maybe(*it, "half_width", c.plant.half_width, "plant");
  }
  if (const auto it = j.find("controller"); it != j.end()) {
    maybe(*it, "kp", c.gains.kp, "controller");
    maybe(*it, "ki", c.gains.ki, "controller");
    maybe(*it, "integral_limit", c.gains.integral_limit, "controller");
    maybe(*it, "k_stanley", c.gains.k_stanley, "controller");
    maybe(*it, "v_softening", c.gains.v_softening, "controller");
  }
  if (const auto it = j.find("compositor"); it != j.end()) {
    maybe(*it, "threads", c.compositor.threads, "compositor");
    maybe(*it, "depth_margin", c.compositor.depth_margin, "compositor");
    maybe(*it, "alpha_depth_threshold", c.compositor.alpha_depth_threshold, "compositor");
    maybe(*it, "ground_shadows", c.compositor.ground_shadows, "compositor");
    maybe(*it, "shadow_resolution", c.compositor.shadow.resolution, "compositor");
  }
  if (const auto it = j.find("detector"); it != j.end()) {
    maybe(*it, "corridor_half_width", c.modular.detector.corridor_half_width, "detector");
    maybe(*it, "ground_tolerance", c.modular.detector.ground_tolerance, "detector");
    maybe(*it, "min_cluster_size", c.modular.detector.min_cluster_size, "detector");
    maybe(*it, "stride", c.modular.detector.stride, "detector");
  }
  if (const auto it = j.find("tracker"); it != j.end()) {
    maybe(*it, "gate", c.modular.tracker.gate, "tracker");
    maybe(*it, "alpha", c.modular.tracker.alpha, "tracker");
    maybe(*it, "max_misses", c.modular.tracker.max_misses, "tracker");
  }
  if (const auto it = j.find("planner"); it != j.end()) {
    maybe(*it, "step", c.modular.planner.step, "planner");
    maybe(*it, "horizon", c.modular.planner.horizon, "planner");
    maybe(*it, "radius", c.modular.planner.radius, "planner");
    maybe(*it, "travel_gate", c.modular.planner.travel_gate, "planner");
    maybe(*it, "cruise", c.modular.planner.cruise, "planner");
    if (it->contains("rule")) {
      const auto r = (*it)["rule"].get<std::string>();
      if (r == "conjunction") c.modular.planner.rule = ConflictRule::conjunction;
      else if (r == "independent") c.modular.planner.rule = ConflictRule::independent;
      else throw ValidationError("planner.rule must be conjunction or independent");
    }
  }
  if (const auto it = j.find("camera"); it != j.end()) {
    maybe(*it, "width", c.camera.width, "camera");
    maybe(*it, "height", c.camera.height, "camera");
    maybe(*it, "fx", c.camera.fx, "camera");
    maybe(*it, "fy", c.camera.fy, "camera");
    maybe(*it, "cx", c.camera.cx, "camera");
    maybe(*it, "cy", c.camera.cy, "camera");
    maybe(*it, "mount_height", c.camera_height, "camera");
    maybe(*it, "pitch", c.camera_pitch, "camera");
    maybe(*it, "forward", c.camera_forward, "camera");
  }
  if (const auto it = j.find("external"); it != j.end()) {
    maybe(*it, "timeout", c.external_timeout, "external");
    maybe(*it, "frames", c.external_frames, "external");
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

/// Applies per-run hyper-parameter overrides, the difficulty knobs, then the
/// seeded spawn jitter.
inline Scenario prepare_scenario(Scenario s, const std::map<std::string, double>& overrides, std::uint64_t seed) {
  for (const auto& [k, v] : overrides) s.hyper_params[k] = v;
  return randomize_spawn(apply_hyper_params(std::move(s)), seed);
}

inline Pose3 camera_mount(const RunConfig& cfg, const Pose2& ego) {
  const Vec2 p = ego.position() + cfg.camera_forward * ego.forward();
  return vehicle_camera_pose(Pose2(p.x(), p.y(), ego.heading), cfg.camera_height, cfg.camera_pitch);
}

inline std::unique_ptr<Agent> make_agent(const RunConfig& cfg) {
  if (cfg.agent == "modular") return std::make_unique<ModularAgent>(cfg.modular);
  if (cfg.agent == "constant" || cfg.agent == "constant_cruise")
    return std::make_unique<ConstantCruiseAgent>(cfg.modular.planner.cruise);
  if (cfg.agent.starts_with("external="))
    return std::make_unique<ExternalAgent>(cfg.agent.substr(9), cfg.external_timeout, cfg.external_frames);
  throw ValidationError("agent '" + cfg.agent + "' cannot be constructed here (human agents need the teleop server)");
}

inline std::unique_ptr<FrameSource> make_source(const RunConfig& cfg, const Scenario& s) {
  if (cfg.stream) return std::make_unique<ReplaySource>(ingest_stream(*cfg.stream));
  SyntheticWorld world;
  world.ground_z = s.ground_z;
  world.light = s.lighting;
  return std::make_unique<SyntheticSource>(world, cfg.camera);
}

/// What the loop exposes to an observer (teleop broadcast) after each tick.
struct TickSnapshot {
  long tick = 0;
  double t = 0.0;
  const FrameRGBD* frame = nullptr;  // composited
  PlantState ego;
  bool triggered = false;
  bool collision = false;  // contact during this tick
  bool goal = false;
  bool ended = false;
};

struct EpisodeHooks {
  std::function<void(long tick, double t)> before_agent;
  std::function<void(const TickSnapshot&)> after_tick;
};

struct EpisodeResult {
  EpisodeReport report;
  std::vector<std::string> tick_log;  // one JSON object per line
  std::vector<TickTiming> timings;
};

inline nlohmann::ordered_json pose_json(const Pose2& p) { return {{"x", p.x}, {"y", p.y}, {"heading", p.heading}}; }

/// Runs one episode of an already prepared scenario.
inline EpisodeResult run_episode(const RunConfig& cfg, const Scenario& scenario, std::uint64_t seed, Agent& agent,
                                 FrameSource& source, const AssetLibrary& assets, const EpisodeHooks& hooks = {}) {
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point a) { return std::chrono::duration<double, std::milli>(clock::now() - a).count(); };

  EpisodeResult res;
  EpisodeReport& rep = res.report;
  rep.scenario = scenario.name;
  rep.kind = to_string(scenario.kind);
  rep.agent = agent.name();
  rep.hyper_params = scenario.hyper_params;
  rep.seed = seed;

  const PlantParams& pp = cfg.plant;
  const int substeps = cfg.substeps();
  const double dt = pp.substep;
  const long max_ticks = std::lround(cfg.time_limit * cfg.tick_hz);
  const PlannedPath& path = scenario.ego.path;
  const auto obstacle = scenario.static_obstacle();
  if (scenario.ego.goal_rule == GoalRule::near_static_obstacle_5m && !obstacle)
    throw ValidationError(scenario.name + ": goal rule near_static_obstacle_5m needs a static actor");

  CompositorConfig ccfg = cfg.compositor;
  ccfg.ground_z = scenario.ground_z;
  InsertRenderer renderer(ccfg);
  Vehicle vehicle(PlantState{scenario.ego.start, scenario.ego.speed, 0.0}, pp);
  Controller controller(cfg.gains);
  ScenarioState state;

  std::vector<PoseSample> poses{{0.0, vehicle.state().pose}};
  bool goal = goal_reached(vehicle.state().pose, scenario.ego.goal_rule, path, obstacle);
  if (goal) rep.time_to_goal = 0.0;
  std::map<std::string, bool> seen_actor;
  if (cfg.dump_frames && !cfg.out_dir.empty()) fs::create_directories(cfg.out_dir / "frames");
  const auto wall_start = clock::now();

  auto boxes_at = [&](double now) {
    std::vector<ActorBox> out;
    for (const auto& a : active_actors(scenario, state, now)) out.push_back({a.track->id, a.footprint()});
    return out;
  };

  long k = 0;
  try {
    for (; k < max_ticks && !goal; ++k) {
      const double t = static_cast<double>(k * substeps) * dt;
      if (cfg.realtime)
        std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(t)));

      const Pose3 mount = camera_mount(cfg, vehicle.state().pose);
      const FrameRGBD raw = source.frame(k, t, mount);
      state = check_trigger(state, vehicle.state().pose, vehicle.state().speed, scenario.trigger, t);
      const auto actors = active_actors(scenario, state, t);
      std::vector<PosedMesh> posed;
      posed.reserve(actors.size());
      for (const auto& a : actors) posed.push_back({assets.get(a.track->asset), lift(a.pose.pose, a.pose.z), a.color});
      const auto ins = renderer.render(raw, posed, scenario.lighting);
      if (cfg.dump_frames && !cfg.out_dir.empty())
        write_png(cfg.out_dir / "frames" / detail::frame_name(k, "png"), ins.frame.color);

      if (hooks.before_agent) hooks.before_agent(k, t);
      const auto t_agent = clock::now();
      const AgentCommand cmd = agent.step(AgentObservation{&ins.frame, vehicle.state(), &path, t, k});
      const double agent_ms = ms_since(t_agent);
      const double target = cmd.target_speed(cfg.modular.planner.cruise);

      const auto t_control = clock::now();
      bool hit_this_tick = false;
      for (int j = 0; j < substeps; ++j) {
        const double now = static_cast<double>(k * substeps + j) * dt;
        Actuation act = controller.update(target, vehicle.state(), path, pp, dt);
        if (cmd.steer_override) act.steer = *cmd.steer_override;
        vehicle.step(now, act.accel, act.steer);
        const double after = static_cast<double>(k * substeps + j + 1) * dt;
        const auto hits = check_collision(vehicle.footprint(), boxes_at(after), k, after);
        for (const auto& h : hits) {
          if (!seen_actor[h.actor_id]) rep.events.push_back(h);
          seen_actor[h.actor_id] = true;
        }
        hit_this_tick = hit_this_tick || !hits.empty();
        poses.push_back({after, vehicle.state().pose});
        if (goal_reached(vehicle.state().pose, scenario.ego.goal_rule, path, obstacle)) {
          goal = true;
          rep.time_to_goal = after;
          break;
        }
      }
      const double control_ms = ms_since(t_control);
      res.timings.push_back({ins.timings.total_ms(), agent_ms, control_ms});
      if (hit_this_tick) ++rep.collision_ticks;

      const auto& s = vehicle.state();
      nlohmann::ordered_json line = {{"tick", k},
                                     {"t", t},
                                     {"ego", {{"x", s.pose.x}, {"y", s.pose.y}, {"heading", s.pose.heading},
                                              {"speed", s.speed}, {"steer", s.steer}}},
                                     {"target_speed", target},
                                     {"triggered", state.triggered}};
      auto jactors = nlohmann::ordered_json::array();
      for (const auto& a : actors) {
        auto ja = pose_json(a.pose.pose);
        ja["id"] = a.track->id;
        jactors.push_back(ja);
      }
      line["actors"] = jactors;
      line["collision"] = hit_this_tick;
      line["goal"] = goal;
      if (source.replay()) line["replay_divergence"] = (raw.cam_pose.translation - mount.translation).norm();
      if (auto d = agent.debug_state(); !d.is_null()) line["agent"] = d;
      res.tick_log.push_back(line.dump());

      if (hooks.after_tick) {
        const bool ended = goal || k + 1 >= max_ticks;
        hooks.after_tick(TickSnapshot{k, t, &ins.frame, s, state.triggered, hit_this_tick, goal, ended});
      }
    }
  } catch (const std::exception& e) {
    rep.error = "tick " + std::to_string(k) + ": " + e.what();
    if (hooks.after_tick) hooks.after_tick(TickSnapshot{k, static_cast<double>(k * substeps) * dt, nullptr,
                                                        vehicle.state(), state.triggered, false, goal, true});
  }
  rep.ticks = k;
  rep.collided = !rep.events.empty();
  // Same rule as the inline check; recomputed from the pose log as a cross-check.
  if (!rep.error) {
    const double ttg = time_to_goal(poses, scenario.ego.goal_rule, path, obstacle, cfg.time_limit);
    if (ttg != rep.time_to_goal) throw EpisodeError(k, "time-to-goal bookkeeping mismatch");
  }
  if (!res.timings.empty()) rep.latency = latency_report(res.timings);
  return res;
}

/// Writes ticks.jsonl, report.json and (wall-clock) latency.json into `dir`.
inline void write_episode(const fs::path& dir, const EpisodeResult& r) {
  fs::create_directories(dir);
  std::string log;
  for (const auto& l : r.tick_log) log += l + "\n";
  write_text_file(dir / "ticks.jsonl", log);
  write_text_file(dir / "report.json", to_json(r.report).dump(2) + "\n");
  if (r.report.latency) write_text_file(dir / "latency.json", to_json(*r.report.latency).dump(2) + "\n");
}

/// Loads, prepares and runs one scenario file with a config-built agent and source.
inline EpisodeResult run_episode(const RunConfig& cfg, const fs::path& scenario_file,
                                 const std::map<std::string, double>& overrides, std::uint64_t seed,
                                 const AssetLibrary& assets) {
  const Scenario s = prepare_scenario(load_scenario_file(scenario_file, &assets), overrides, seed);
  auto agent = make_agent(cfg);
  auto source = make_source(cfg, s);
  return run_episode(cfg, s, seed, *agent, *source, assets);
}

// ---- suites ----------------------------------------------------------------------

struct SuiteEntry {
  std::string id;
  fs::path scenario_file;
  std::map<std::string, double> overrides;
  std::uint64_t seed = 0;
};

inline std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

/// Scenario x grid combination x seed, in a fixed order.
inline std::vector<SuiteEntry> expand_suite(const RunConfig& cfg) {
  std::vector<std::map<std::string, double>> combos{{}};
  for (const auto& [key, values] : cfg.grid) {
    std::vector<std::map<std::string, double>> next;
    for (const auto& c : combos)
      for (double v : values) {
        auto m = c;
        m[key] = v;
        next.push_back(std::move(m));
      }
    combos = std::move(next);
  }
  std::vector<SuiteEntry> out;
  for (const auto& file : cfg.scenarios) {
    for (const auto& c : combos) {
      for (auto seed : cfg.seeds) {
        std::string id = file.stem().string();
        for (const auto& [k, v] : c) id += "__" + k + "=" + format_value(v);
        id += "__seed" + std::to_string(seed);
        out.push_back({id, file, c, seed});
      }
    }
  }
  return out;
}

struct SuiteResult {
  BenchmarkTable table;
  std::vector<SuiteEntry> entries;
  std::vector<EpisodeReport> reports;
};

inline nlohmann::ordered_json suite_json(const SuiteResult& r) {
  auto eps = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.reports.size(); ++i) {
    auto e = to_json(r.reports[i]);
    e["id"] = r.entries[i].id;
    eps.push_back(e);
  }
  auto j = to_json(r.table);
  j["episodes"] = eps;
  return j;
}

/// Runs every suite entry (in parallel when jobs > 1) and writes
///   <out>/episodes/<id>/{ticks.jsonl,report.json,latency.json}
///   <out>/suite.json, <out>/table.txt, <out>/latency.txt
/// Episode failures are recorded in their reports; the suite continues.
inline SuiteResult run_suite(const RunConfig& cfg, const AssetLibrary& assets) {
  cfg.validate();
  SuiteResult out;
  out.entries = expand_suite(cfg);
  out.reports.resize(out.entries.size());
  std::vector<std::optional<LatencyReport>> latency(out.entries.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < out.entries.size(); i = next++) {
      const auto& e = out.entries[i];
      RunConfig ecfg = cfg;
      ecfg.out_dir = cfg.out_dir / "episodes" / e.id;
      EpisodeResult r;
      try {
        r = run_episode(ecfg, e.scenario_file, e.overrides, e.seed, assets);
      } catch (const std::exception& ex) {
        r.report.scenario = e.scenario_file.stem().string();
        r.report.agent = cfg.agent;
        r.report.kind = "error";
        r.report.seed = e.seed;
        r.report.hyper_params = e.overrides;
        r.report.error = ex.what();
      }
      write_episode(ecfg.out_dir, r);
      latency[i] = r.report.latency;
      out.reports[i] = std::move(r.report);
    }
  };
  const int n = std::min<int>(cfg.jobs, static_cast<int>(out.entries.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  out.table = aggregate(out.reports);
  fs::create_directories(cfg.out_dir);
  write_text_file(cfg.out_dir / "suite.json", suite_json(out).dump(2) + "\n");
  write_text_file(cfg.out_dir / "table.txt", to_text(out.table));

  std::vector<LatencyReport> runs;
  for (const auto& l : latency)
    if (l) runs.push_back(*l);
  if (!runs.empty()) write_text_file(cfg.out_dir / "latency.txt", latency_table({{cfg.agent, merge_latency(runs)}}));
  return out;
}

/// Rebuilds the benchmark table from the report.json files under `dir`.
inline BenchmarkTable table_from_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no report.json files found");
  std::vector<EpisodeReport> reports;
  for (const auto& f : files) {
    try {
      reports.push_back(episode_report_from_json(nlohmann::json::parse(read_text_file(f))));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
  }
  return aggregate(reports);
}

/// Runtime rows per agent from the latency.json files under `dir`.
inline std::vector<std::pair<std::string, LatencyReport>> latency_from_directory(const fs::path& dir) {
  std::map<std::string, std::vector<LatencyReport>> by_agent;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "latency.json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto report = f.parent_path() / "report.json";
    if (!fs::exists(report)) continue;
    try {
      const auto agent = nlohmann::json::parse(read_text_file(report)).at("agent").get<std::string>();
      by_agent[agent].push_back(latency_report_from_json(nlohmann::json::parse(read_text_file(f))));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(f.string() + ": " + e.what());
    }
  }
  std::vector<std::pair<std::string, LatencyReport>> rows;
  for (const auto& [agent, runs] : by_agent) rows.emplace_back(agent, merge_latency(runs));
  return rows;
}

}  // namespace mrsim
