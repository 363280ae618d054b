#pragma once

// Scenario files: virtual actors on timed waypoint tracks, a trigger zone,
// the ego plan, lighting, and per-kind difficulty knobs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrsim/geometry.hpp"
#include "mrsim/image_io.hpp"
#include "mrsim/mesh.hpp"
#include "mrsim/shading.hpp"

namespace mrsim {

enum class ScenarioKind { static_obstacle, jaywalker, jaywalker_occluded, traffic_light_violation, custom };
enum class GoalRule { near_static_obstacle_5m, path_end_1p5m };

struct Waypoint {
  double t = 0.0;  // seconds since trigger
  Pose2 pose;
  double z = 0.0;
  friend bool operator==(const Waypoint&, const Waypoint&) = default;
};

/// Scripted base-colour change (e.g. a traffic light going red).
/// Times are seconds since trigger; before the first key the first colour holds.
struct ColorKey {
  double t = 0.0;
  Rgb color = Rgb::Ones();
  friend bool operator==(const ColorKey& a, const ColorKey& b) { return a.t == b.t && a.color == b.color; }
};

struct ActorTrack {
  std::string id;
  std::string asset;
  double half_length = 0.5;
  double half_width = 0.5;
  std::vector<Waypoint> waypoints;
  std::optional<std::string> animation;
  std::vector<ColorKey> colors;

  /// Single-waypoint actors are static and present from episode start.
  bool moving() const { return waypoints.size() >= 2; }
  friend bool operator==(const ActorTrack&, const ActorTrack&) = default;
};

struct TriggerZone {
  Vec2 center = Vec2::Zero();
  double radius = 1.0;
  double speed_min = 0.0;
  double speed_max = kInf;
  friend bool operator==(const TriggerZone& a, const TriggerZone& b) {
    return a.center == b.center && a.radius == b.radius && a.speed_min == b.speed_min && a.speed_max == b.speed_max;
  }
};

struct EgoSpec {
  Pose2 start;
  double speed = 0.0;
  PlannedPath path;
  GoalRule goal_rule = GoalRule::path_end_1p5m;
  friend bool operator==(const EgoSpec&, const EgoSpec&) = default;
};

struct Scenario {
  std::string name;
  ScenarioKind kind = ScenarioKind::custom;
  std::vector<ActorTrack> actors;
  TriggerZone trigger;
  EgoSpec ego;
  LightEnvironment lighting;
  std::map<std::string, double> hyper_params;
  double ground_z = 0.0;

  friend bool operator==(const Scenario&, const Scenario&) = default;

  double hyper(const std::string& key, double fallback) const {
    const auto it = hyper_params.find(key);
    return it == hyper_params.end() ? fallback : it->second;
  }

  /// Position of the first static actor, used by the near-obstacle goal rule.
  std::optional<Vec2> static_obstacle() const {
    for (const auto& a : actors)
      if (!a.moving()) return a.waypoints.front().pose.position();
    return std::nullopt;
  }
};

struct ScenarioState {
  bool triggered = false;
  std::optional<double> trigger_time;
  friend bool operator==(const ScenarioState&, const ScenarioState&) = default;
};

// ---- names -------------------------------------------------------------------

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::static_obstacle: return "static_obstacle";
    case ScenarioKind::jaywalker: return "jaywalker";
    case ScenarioKind::jaywalker_occluded: return "jaywalker_occluded";
    case ScenarioKind::traffic_light_violation: return "traffic_light_violation";
    case ScenarioKind::custom: return "custom";
  }
  return "custom";
}

inline const char* to_string(GoalRule g) {
  return g == GoalRule::near_static_obstacle_5m ? "near_static_obstacle_5m" : "path_end_1p5m";
}

namespace detail {

using nlohmann::json;

[[noreturn]] inline void field_error(const std::string& field, const std::string& what) {
  throw ValidationError(field + ": " + what);
}

inline const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) field_error(where.empty() ? key : where + "." + key, "missing");
  return obj.at(key);
}

inline double number(const json& v, const std::string& field) {
  if (!v.is_number()) field_error(field, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) field_error(field, "must be finite");
  return d;
}

inline std::vector<double> numbers(const json& v, const std::string& field, std::size_t min_n, std::size_t max_n) {
  if (!v.is_array() || v.size() < min_n || v.size() > max_n) {
    field_error(field, min_n == max_n ? "expected an array of " + std::to_string(min_n) + " numbers"
                                      : "expected an array of " + std::to_string(min_n) + ".." +
                                            std::to_string(max_n) + " numbers");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], field + "[" + std::to_string(i) + "]"));
  return out;
}

inline Rgb rgb(const json& v, const std::string& field) {
  const auto n = numbers(v, field, 3, 3);
  return {n[0], n[1], n[2]};
}

inline ScenarioKind parse_kind(const std::string& s) {
  for (auto k : {ScenarioKind::static_obstacle, ScenarioKind::jaywalker, ScenarioKind::jaywalker_occluded,
                 ScenarioKind::traffic_light_violation, ScenarioKind::custom})
    if (s == to_string(k)) return k;
  field_error("kind", "unknown scenario kind '" + s + "'");
}

inline GoalRule parse_goal(const std::string& s) {
  if (s == "near_static_obstacle_5m") return GoalRule::near_static_obstacle_5m;
  if (s == "path_end_1p5m") return GoalRule::path_end_1p5m;
  field_error("ego.goal_rule", "unknown goal rule '" + s + "'");
}

inline std::string string_field(const json& v, const std::string& field) {
  if (!v.is_string()) field_error(field, "expected a string");
  return v.get<std::string>();
}

}  // namespace detail

/// Checks every invariant; throws ValidationError naming the field.
inline void validate(const Scenario& s, const AssetLibrary* assets = nullptr) {
  using detail::field_error;
  if (s.name.empty()) field_error("name", "must not be empty");
  if (!(s.trigger.radius > 0.0)) field_error("trigger.radius", "must be positive");
  if (!(s.trigger.speed_min >= 0.0 && s.trigger.speed_min <= s.trigger.speed_max))
    field_error("trigger.speed_range", "require 0 <= lo <= hi");
  if (s.ego.path.empty()) field_error("ego.path", "missing");
  if (!(s.ego.speed >= 0.0)) field_error("ego.speed", "must be non-negative");
  s.lighting.validate();
  for (std::size_t i = 0; i < s.actors.size(); ++i) {
    const auto& a = s.actors[i];
    const std::string where = "actors[" + std::to_string(i) + "]";
    if (a.id.empty()) field_error(where + ".id", "must not be empty");
    for (std::size_t j = 0; j < i; ++j)
      if (s.actors[j].id == a.id) field_error(where + ".id", "duplicate actor id '" + a.id + "'");
    if (!(a.half_length > 0.0 && a.half_width > 0.0)) field_error(where + ".footprint", "extents must be positive");
    if (a.waypoints.empty()) field_error(where + ".waypoints", "need at least one waypoint");
    if (a.waypoints.front().t != 0.0) field_error(where + ".waypoints", "first waypoint time must be 0");
    for (std::size_t k = 1; k < a.waypoints.size(); ++k)
      if (!(a.waypoints[k].t > a.waypoints[k - 1].t))
        field_error(where + ".waypoints", "waypoint times not strictly increasing");
    for (std::size_t k = 1; k < a.colors.size(); ++k)
      if (!(a.colors[k].t > a.colors[k - 1].t)) field_error(where + ".colors", "times not strictly increasing");
    if (assets && !assets->resolvable(a.asset)) throw AssetError(where + ".asset: unresolved asset reference '" + a.asset + "'");
  }
}

/// Parses the JSON scenario schema. When `assets` is given every asset
/// reference must resolve.
inline Scenario load_scenario(const std::string& text, const AssetLibrary* assets = nullptr) {
  using detail::json;
  using detail::number;
  using detail::numbers;
  using detail::require;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("scenario: top level must be an object");

  Scenario s;
  s.name = detail::string_field(require(j, "name", ""), "name");
  s.kind = j.contains("kind") ? detail::parse_kind(detail::string_field(j["kind"], "kind")) : ScenarioKind::custom;

  const json& trig = require(j, "trigger", "");
  const auto c = numbers(require(trig, "center", "trigger"), "trigger.center", 2, 2);
  s.trigger.center = Vec2(c[0], c[1]);
  s.trigger.radius = number(require(trig, "radius", "trigger"), "trigger.radius");
  if (trig.contains("speed_range")) {
    // null as the upper bound means unbounded
    json r = trig["speed_range"];
    const bool open = r.is_array() && r.size() == 2 && r[1].is_null();
    if (open) r[1] = 0.0;
    const auto v = numbers(r, "trigger.speed_range", 2, 2);
    s.trigger.speed_min = v[0];
    s.trigger.speed_max = open ? kInf : v[1];
  }

  const json& ego = require(j, "ego", "");
  const auto st = numbers(require(ego, "start", "ego"), "ego.start", 3, 3);
  s.ego.start = Pose2(st[0], st[1], st[2]);
  s.ego.speed = ego.contains("speed") ? number(ego["speed"], "ego.speed") : 0.0;
  const json& path = require(ego, "path", "ego");
  if (!path.is_array()) detail::field_error("ego.path", "expected an array of [x, y]");
  std::vector<Vec2> pts;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const auto p = numbers(path[i], "ego.path[" + std::to_string(i) + "]", 2, 2);
    pts.emplace_back(p[0], p[1]);
  }
  try {
    s.ego.path = PlannedPath(std::move(pts));
  } catch (const ValidationError& e) {
    detail::field_error("ego.path", e.what());
  }
  if (ego.contains("goal_rule")) s.ego.goal_rule = detail::parse_goal(detail::string_field(ego["goal_rule"], "ego.goal_rule"));

  if (j.contains("actors")) {
    const json& actors = j["actors"];
    if (!actors.is_array()) detail::field_error("actors", "expected an array");
    for (std::size_t i = 0; i < actors.size(); ++i) {
      const std::string where = "actors[" + std::to_string(i) + "]";
      const json& a = actors[i];
      ActorTrack t;
      t.id = detail::string_field(require(a, "id", where), where + ".id");
      t.asset = detail::string_field(require(a, "asset", where), where + ".asset");
      const auto fp = numbers(require(a, "footprint", where), where + ".footprint", 2, 2);
      t.half_length = fp[0];
      t.half_width = fp[1];
      const json& wps = require(a, "waypoints", where);
      if (!wps.is_array()) detail::field_error(where + ".waypoints", "expected an array");
      for (std::size_t k = 0; k < wps.size(); ++k) {
        const auto w = numbers(wps[k], where + ".waypoints[" + std::to_string(k) + "]", 4, 5);
        t.waypoints.push_back({w[0], Pose2(w[1], w[2], w[3]), w.size() == 5 ? w[4] : 0.0});
      }
      if (a.contains("animation") && !a["animation"].is_null())
        t.animation = detail::string_field(a["animation"], where + ".animation");
      if (a.contains("colors")) {
        const json& cs = a["colors"];
        if (!cs.is_array()) detail::field_error(where + ".colors", "expected an array");
        for (std::size_t k = 0; k < cs.size(); ++k) {
          const auto v = numbers(cs[k], where + ".colors[" + std::to_string(k) + "]", 4, 4);
          t.colors.push_back({v[0], Rgb(v[1], v[2], v[3])});
        }
      }
      s.actors.push_back(std::move(t));
    }
  }

  if (j.contains("lighting")) {
    const json& l = j["lighting"];
    if (l.contains("sun_dir")) s.lighting.sun_dir = detail::rgb(l["sun_dir"], "lighting.sun_dir");
    if (l.contains("sun_rgb")) s.lighting.sun_radiance = detail::rgb(l["sun_rgb"], "lighting.sun_rgb");
    if (l.contains("ambient_rgb")) s.lighting.ambient_radiance = detail::rgb(l["ambient_rgb"], "lighting.ambient_rgb");
  }
  if (j.contains("hyper_params")) {
    const json& h = j["hyper_params"];
    if (!h.is_object()) detail::field_error("hyper_params", "expected an object");
    for (auto it = h.begin(); it != h.end(); ++it) s.hyper_params[it.key()] = number(it.value(), "hyper_params." + it.key());
  }
  if (j.contains("ground_z")) s.ground_z = number(j["ground_z"], "ground_z");

  validate(s, assets);
  return s;
}

inline Scenario load_scenario_file(const std::filesystem::path& path, const AssetLibrary* assets = nullptr) {
  try {
    return load_scenario(read_text_file(path), assets);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline nlohmann::json to_json(const Scenario& s) {
  using nlohmann::json;
  auto vec = [](const auto& v) { return json::array({v[0], v[1], v[2]}); };
  json j;
  j["name"] = s.name;
  j["kind"] = to_string(s.kind);
  j["trigger"] = {{"center", {s.trigger.center.x(), s.trigger.center.y()}},
                  {"radius", s.trigger.radius},
                  {"speed_range", {s.trigger.speed_min, std::isfinite(s.trigger.speed_max)
                                                            ? json(s.trigger.speed_max)
                                                            : json(nullptr)}}};
  json path = json::array();
  for (const auto& p : s.ego.path.waypoints()) path.push_back({p.x(), p.y()});
  j["ego"] = {{"start", {s.ego.start.x, s.ego.start.y, s.ego.start.heading}},
              {"speed", s.ego.speed},
              {"path", path},
              {"goal_rule", to_string(s.ego.goal_rule)}};
  json actors = json::array();
  for (const auto& a : s.actors) {
    json wps = json::array();
    for (const auto& w : a.waypoints) wps.push_back({w.t, w.pose.x, w.pose.y, w.pose.heading, w.z});
    json ja = {{"id", a.id}, {"asset", a.asset}, {"footprint", {a.half_length, a.half_width}}, {"waypoints", wps}};
    if (a.animation) ja["animation"] = *a.animation;
    if (!a.colors.empty()) {
      json cs = json::array();
      for (const auto& c : a.colors) cs.push_back({c.t, c.color.x(), c.color.y(), c.color.z()});
      ja["colors"] = cs;
    }
    actors.push_back(ja);
  }
  j["actors"] = actors;
  j["lighting"] = {{"sun_dir", vec(s.lighting.sun_dir)},
                   {"sun_rgb", vec(s.lighting.sun_radiance)},
                   {"ambient_rgb", vec(s.lighting.ambient_radiance)}};
  j["hyper_params"] = json::object();
  for (const auto& [k, v] : s.hyper_params) j["hyper_params"][k] = v;
  j["ground_z"] = s.ground_z;
  return j;
}

inline std::string serialize(const Scenario& s) { return to_json(s).dump(2); }

// ---- runtime -----------------------------------------------------------------

/// Latching trigger: fires once when the ego is inside the zone at a speed in range.
inline ScenarioState check_trigger(ScenarioState state, const Pose2& ego, double ego_speed, const TriggerZone& zone,
                                   double now) {
  if (state.triggered) return state;
  const double dist = (ego.position() - zone.center).norm();
  if (dist <= zone.radius && ego_speed >= zone.speed_min && ego_speed <= zone.speed_max) {
    state.triggered = true;
    state.trigger_time = now;
  }
  return state;
}

struct ActorPose {
  Pose2 pose;
  double z = 0.0;
};

/// Piecewise-linear position, shortest-arc heading; holds the ends.
inline ActorPose sample_actor_pose(const ActorTrack& track, double t) {
  const auto& w = track.waypoints;
  if (w.empty()) throw ValidationError("actor '" + track.id + "' has no waypoints");
  if (t <= w.front().t) return {w.front().pose, w.front().z};
  if (t >= w.back().t) return {w.back().pose, w.back().z};
  const auto it = std::upper_bound(w.begin(), w.end(), t, [](double v, const Waypoint& p) { return v < p.t; });
  const Waypoint& b = *it;
  const Waypoint& a = *(it - 1);
  const double f = (t - a.t) / (b.t - a.t);
  const double dh = normalize_angle(b.pose.heading - a.pose.heading);
  return {Pose2(a.pose.x + f * (b.pose.x - a.pose.x), a.pose.y + f * (b.pose.y - a.pose.y), a.pose.heading + f * dh),
          a.z + f * (b.z - a.z)};
}

inline std::optional<Rgb> sample_actor_color(const ActorTrack& track, double t_since_trigger) {
  if (track.colors.empty()) return std::nullopt;
  Rgb c = track.colors.front().color;
  for (const auto& k : track.colors)
    if (k.t <= t_since_trigger) c = k.color;
  return c;
}

struct ActiveActor {
  const ActorTrack* track = nullptr;
  ActorPose pose;
  std::optional<Rgb> color;

  Obb2 footprint() const { return Obb2{pose.pose, track->half_length, track->half_width}; }
};

/// Actors present at time `now`: static actors always, moving actors only after the trigger.
inline std::vector<ActiveActor> active_actors(const Scenario& s, const ScenarioState& state, double now) {
  std::vector<ActiveActor> out;
  const double since = state.triggered ? now - *state.trigger_time : 0.0;
  for (const auto& a : s.actors) {
    if (a.moving() && !state.triggered) continue;
    out.push_back({&a, sample_actor_pose(a, since), sample_actor_color(a, state.triggered ? since : -kInf)});
  }
  return out;
}

// ---- difficulty knobs ----------------------------------------------------------

namespace detail {

/// Re-times a track so it is walked at constant `speed`.
inline void retime(ActorTrack& a, double speed) {
  if (!(speed > 0.0)) field_error("hyper_params.walker_speed", "must be positive");
  double t = 0.0;
  for (std::size_t k = 1; k < a.waypoints.size(); ++k) {
    const double d = (a.waypoints[k].pose.position() - a.waypoints[k - 1].pose.position()).norm();
    t += d > 0.0 ? d / speed : 1e-3;
    a.waypoints[k].t = t;
  }
}

inline std::optional<double> segment_intersection(const Vec2& p0, const Vec2& p1, const Vec2& q0, const Vec2& q1) {
  const Vec2 r = p1 - p0, s = q1 - q0;
  const double den = r.x() * s.y() - r.y() * s.x();
  if (std::abs(den) < 1e-12) return std::nullopt;
  const Vec2 d = q0 - p0;
  const double t = (d.x() * s.y() - d.y() * s.x()) / den;
  const double u = (d.x() * r.y() - d.y() * r.x()) / den;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

/// Moves the first waypoint of `a` along its first segment so that the actor
/// reaches the ego path exactly when an ego driving at `ego_speed` from the
/// trigger boundary does.
inline void sync_crossing(ActorTrack& a, const Scenario& s, double ego_speed) {
  if (!a.moving()) return;
  const Vec2 p0 = a.waypoints[0].pose.position(), p1 = a.waypoints[1].pose.position();
  const auto path = s.ego.path.waypoints();
  const Vec2 dir = (p1 - p0).normalized();
  // Extend the first segment backwards so a start already past the path still finds it.
  const Vec2 a0 = p0 - 1e3 * dir;
  std::optional<Vec2> cross;
  for (std::size_t i = 0; i + 1 < path.size() && !cross; ++i)
    if (auto t = segment_intersection(a0, p1, path[i], path[i + 1])) cross = a0 + *t * (p1 - a0);
  if (!cross) field_error("hyper_params.crossing_sync", "actor '" + a.id + "' first segment never crosses the ego path");
  const double s_cross = path_frame(s.ego.path, *cross).s;
  const double s_trig = path_frame(s.ego.path, s.trigger.center).s - s.trigger.radius;
  const double t_ego = std::max(0.0, s_cross - s_trig) / ego_speed;
  const double seg_speed = (p1 - p0).norm() / (a.waypoints[1].t - a.waypoints[0].t);
  const Vec2 start = *cross - dir * (seg_speed * t_ego);
  if ((p1 - start).dot(dir) <= 0.0)
    field_error("hyper_params.crossing_sync", "actor '" + a.id + "' would start past its first waypoint");
  const double old_t1 = a.waypoints[1].t;
  const double new_t1 = (p1 - start).norm() / seg_speed;
  a.waypoints[0].pose = Pose2(start.x(), start.y(), a.waypoints[0].pose.heading);
  for (std::size_t k = 1; k < a.waypoints.size(); ++k) a.waypoints[k].t += new_t1 - old_t1;
}

}  // namespace detail

/// Applies the difficulty knobs in `hyper_params`. Recognised keys:
///   walker_speed        re-times moving actors to this constant speed (m/s)
///   trigger_distance    trigger radius (m)
///   crossing_sync       if non-zero, moving actors reach the ego path together
///                       with an ego at `cruise_speed` (default 2 m/s)
///   obstacle_distance   static_obstacle: arc length of the first static actor
///   obstacle_lateral    static_obstacle: its left offset from the path (m)
/// Unknown keys are kept but ignored.
inline Scenario apply_hyper_params(Scenario s) {
  if (s.hyper_params.count("walker_speed"))
    for (auto& a : s.actors)
      if (a.moving()) detail::retime(a, s.hyper_params.at("walker_speed"));
  if (s.hyper_params.count("trigger_distance")) {
    s.trigger.radius = s.hyper_params.at("trigger_distance");
    if (!(s.trigger.radius > 0.0)) detail::field_error("hyper_params.trigger_distance", "must be positive");
  }
  if (s.hyper("crossing_sync", 0.0) != 0.0) {
    const double cruise = s.hyper("cruise_speed", 2.0);
    for (auto& a : s.actors) detail::sync_crossing(a, s, cruise);
  }
  if (s.kind == ScenarioKind::static_obstacle &&
      (s.hyper_params.count("obstacle_distance") || s.hyper_params.count("obstacle_lateral"))) {
    for (auto& a : s.actors) {
      if (a.moving()) continue;
      const auto f = path_frame(s.ego.path, a.waypoints[0].pose.position());
      const double sd = s.hyper("obstacle_distance", f.s);
      const double lat = s.hyper("obstacle_lateral", f.e);
      const Vec2 p = s.ego.path.point_at(sd);
      const double h = s.ego.path.heading_at(sd);
      const Vec2 q = p + lat * Vec2(-std::sin(h), std::cos(h));
      a.waypoints[0].pose = Pose2(q.x(), q.y(), a.waypoints[0].pose.heading);
      break;
    }
  }
  validate(s);
  return s;
}

/// Shifts every moving actor's track along its initial direction by a uniform
/// offset in [-band/2, band/2], band = hyper_params["spawn_band"] (default 0).
inline Scenario randomize_spawn(Scenario s, std::uint64_t seed) {
  const double band = s.hyper("spawn_band", 0.0);
  if (band == 0.0) return s;
  std::mt19937_64 rng(seed);
  for (auto& a : s.actors) {
    if (!a.moving()) continue;
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    const double off = (u - 0.5) * band;
    const Vec2 dir = (a.waypoints[1].pose.position() - a.waypoints[0].pose.position()).normalized();
    for (auto& w : a.waypoints) w.pose = Pose2(w.pose.x + off * dir.x(), w.pose.y + off * dir.y(), w.pose.heading);
  }
  return s;
}

}  // namespace mrsim
