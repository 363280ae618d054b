#pragma once

// Agent interface and the modular stack: depth-cluster detection, greedy
// tracking with a linear motion model, forecast-based stop/go planning.

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "mrsim/compositor.hpp"
#include "mrsim/geometry.hpp"
#include "mrsim/plant.hpp"

namespace mrsim {

// ---- detection ---------------------------------------------------------------

struct Detection {
  Vec2 position = Vec2::Zero();  // ego BEV frame: x forward, y left
  double extent_hint = 0.0;      // largest side of the cluster's BEV bounding box
  int pixel_count = 0;
};

struct DetectorConfig {
  double corridor_half_width = 4.0;
  double ground_tolerance = 0.15;
  double ground_z = 0.0;
  double max_height = 4.0;  // points higher above ground are ignored
  double cell = 0.25;
  int min_cluster_size = 30;
  int stride = 1;             // pixel subsampling
  double surface_link = 0.5;  // m, neighbouring-pixel link distance
};

/// Back-projects valid depth pixels, drops ground and off-corridor points,
/// clusters the rest on a BEV grid and reports each large enough cluster at its
/// median x / y in the ego frame.
///
/// Cells join a cluster when they are 8-connected, or when they hold points
/// from neighbouring pixels that lie within `surface_link` of each other. The
/// second rule keeps a surface seen at a grazing angle (box tops, far faces)
/// in one piece even though its pixel rows land more than a cell apart.
inline std::vector<Detection> detect_obstacles(const FrameRGBD& frame, const Pose2& ego, const PlannedPath& path,
                                               const DetectorConfig& cfg = {}) {
  if (cfg.cell <= 0.0 || cfg.stride < 1) throw ValidationError("detector: cell and stride must be positive");
  struct Point {
    Vec2 ego;
    Vec3 world;
    std::pair<long, long> cell;
  };
  std::vector<Point> pts;
  const int W = frame.depth.width(), H = frame.depth.height();
  const int GW = (W + cfg.stride - 1) / cfg.stride, GH = (H + cfg.stride - 1) / cfg.stride;
  std::vector<int> at_pixel(static_cast<std::size_t>(GW) * GH, -1);
  for (int gv = 0; gv < GH; ++gv) {
    for (int gu = 0; gu < GW; ++gu) {
      const int u = gu * cfg.stride, v = gv * cfg.stride;
      const double d = frame.depth.at(u, v);
      if (!(d > 0.0)) continue;
      const Vec3 p = back_project(u + 0.5, v + 0.5, d, frame.cam_pose, frame.cam);
      const double h = p.z() - cfg.ground_z;
      if (h <= cfg.ground_tolerance || h > cfg.max_height) continue;
      const Vec2 w(p.x(), p.y());
      if (std::abs(path_frame(path, w).e) > cfg.corridor_half_width) continue;
      const Vec2 e = ego.to_local(w);
      at_pixel[static_cast<std::size_t>(gv) * GW + gu] = static_cast<int>(pts.size());
      pts.push_back({e, p, {static_cast<long>(std::floor(e.x() / cfg.cell)), static_cast<long>(std::floor(e.y() / cfg.cell))}});
    }
  }

  // Cells in key order; union-find over their indices.
  std::map<std::pair<long, long>, int> cell_index;
  for (const auto& p : pts) cell_index.emplace(p.cell, 0);
  {
    int k = 0;
    for (auto& [key, idx] : cell_index) idx = k++;
  }
  std::vector<int> parent(cell_index.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  auto unite = [&](int a, int b) {
    a = find(a), b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (const auto& [key, idx] : cell_index) {
    for (long dx = -1; dx <= 1; ++dx) {
      for (long dy = -1; dy <= 1; ++dy) {
        const auto it = cell_index.find({key.first + dx, key.second + dy});
        if (it != cell_index.end()) unite(idx, it->second);
      }
    }
  }
  for (int gv = 0; gv < GH; ++gv) {
    for (int gu = 0; gu < GW; ++gu) {
      const int a = at_pixel[static_cast<std::size_t>(gv) * GW + gu];
      if (a < 0) continue;
      for (const auto& [du, dv] : {std::pair{1, 0}, std::pair{0, 1}}) {
        if (gu + du >= GW || gv + dv >= GH) continue;
        const int b = at_pixel[static_cast<std::size_t>(gv + dv) * GW + gu + du];
        if (b >= 0 && (pts[a].world - pts[b].world).norm() <= cfg.surface_link)
          unite(cell_index.at(pts[a].cell), cell_index.at(pts[b].cell));
      }
    }
  }

  // Clusters numbered by their smallest cell key, points in scan order.
  std::map<int, int> root_to_cluster;
  std::vector<std::vector<int>> clusters;
  for (const auto& [key, idx] : cell_index) {
    if (root_to_cluster.emplace(find(idx), static_cast<int>(clusters.size())).second) clusters.emplace_back();
  }
  for (int i = 0; i < static_cast<int>(pts.size()); ++i)
    clusters[root_to_cluster.at(find(cell_index.at(pts[i].cell)))].push_back(i);

  auto median = [](std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::vector<Detection> out;
  for (const auto& c : clusters) {
    if (static_cast<int>(c.size()) < cfg.min_cluster_size) continue;
    std::vector<double> xs, ys;
    xs.reserve(c.size());
    ys.reserve(c.size());
    for (int i : c) {
      xs.push_back(pts[i].ego.x());
      ys.push_back(pts[i].ego.y());
    }
    const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
    const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
    Detection d;
    d.extent_hint = std::max(*xmax - *xmin, *ymax - *ymin);
    d.position = Vec2(median(xs), median(ys));
    d.pixel_count = static_cast<int>(c.size());
    out.push_back(d);
  }
  return out;
}

// ---- tracking ----------------------------------------------------------------

struct Track {
  int id = 0;
  Vec2 position = Vec2::Zero();  // world frame
  Vec2 velocity = Vec2::Zero();
  int age = 1;
  int misses = 0;
  Vec2 last_observed = Vec2::Zero();
  double since_observed = 0.0;  // seconds since last_observed was measured
};

struct Matching {
  std::vector<std::pair<int, int>> pairs;  // (track index, detection index)
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;
};

/// Globally-smallest-distance-first matching. Ties break on (track id,
/// detection index). `detections` are world-frame positions.
inline Matching associate_greedy(const std::vector<Track>& tracks, const std::vector<Vec2>& detections, double gate) {
  if (!(gate > 0.0)) throw ValidationError("associate: gate must be positive");
  std::vector<std::tuple<double, int, int, int>> cand;  // distance, track id, detection, track index
  for (int t = 0; t < static_cast<int>(tracks.size()); ++t)
    for (int d = 0; d < static_cast<int>(detections.size()); ++d) {
      const double dist = (tracks[t].position - detections[d]).norm();
      if (dist <= gate) cand.emplace_back(dist, tracks[t].id, d, t);
    }
  std::sort(cand.begin(), cand.end());
  std::vector<char> used_t(tracks.size(), 0), used_d(detections.size(), 0);
  Matching m;
  for (const auto& [dist, id, d, t] : cand) {
    if (used_t[t] || used_d[d]) continue;
    used_t[t] = used_d[d] = 1;
    m.pairs.emplace_back(t, d);
  }
  for (int t = 0; t < static_cast<int>(tracks.size()); ++t)
    if (!used_t[t]) m.unmatched_tracks.push_back(t);
  for (int d = 0; d < static_cast<int>(detections.size()); ++d)
    if (!used_d[d]) m.unmatched_detections.push_back(d);
  return m;
}

struct TrackerConfig {
  double gate = 2.0;
  double alpha = 0.5;
  int max_misses = 5;
};

/// Linear-motion track update. Matched velocity is the smoothed finite
/// difference against the last observed position; unmatched tracks coast.
inline std::vector<Track> update_tracks(const std::vector<Track>& tracks, const Matching& m,
                                        const std::vector<Vec2>& detections, double dt, const TrackerConfig& cfg,
                                        int& next_id) {
  if (!(dt > 0.0)) throw ValidationError("update_tracks: dt must be positive");
  std::vector<std::optional<Track>> next(tracks.size());
  for (const auto& [ti, di] : m.pairs) {
    Track t = tracks[ti];
    const Vec2 z = detections[di];
    const double elapsed = t.since_observed + dt;
    t.velocity = cfg.alpha * (z - t.last_observed) / elapsed + (1.0 - cfg.alpha) * t.velocity;
    t.position = t.last_observed = z;
    t.since_observed = 0.0;
    t.misses = 0;
    ++t.age;
    next[ti] = t;
  }
  for (int ti : m.unmatched_tracks) {
    Track t = tracks[ti];
    t.position += t.velocity * dt;
    t.since_observed += dt;
    ++t.misses;
    ++t.age;
    if (t.misses <= cfg.max_misses) next[ti] = t;
  }
  std::vector<Track> out;
  for (auto& t : next)
    if (t) out.push_back(*t);
  for (int di : m.unmatched_detections) {
    Track t;
    t.id = next_id++;
    t.position = t.last_observed = detections[di];
    out.push_back(t);
  }
  return out;
}

// ---- planning ----------------------------------------------------------------

struct AgentCommand {
  std::optional<double> desired_speed;
  std::optional<double> brake;  // [0, 1]
  std::optional<double> steer_override;

  /// Speed target for the longitudinal controller.
  double target_speed(double cruise) const {
    if (desired_speed) return *desired_speed;
    if (brake) return cruise * (1.0 - std::clamp(*brake, 0.0, 1.0));
    return 0.0;
  }
  friend bool operator==(const AgentCommand&, const AgentCommand&) = default;
};

enum class ConflictRule {
  conjunction,  // within radius AND ego travel to that step <= travel_gate
  independent,  // within radius at any step, OR a current track on the path within travel_gate ahead
};

struct PlannerConfig {
  double step = 0.2;
  double horizon = 10.0;
  double radius = 3.0;
  double travel_gate = 5.0;
  double cruise = 2.0;
  ConflictRule rule = ConflictRule::conjunction;

  int steps() const { return static_cast<int>(std::lround(horizon / step)); }
};

/// First forecast step (0-based) at which a track conflicts with the ego, if any.
inline std::optional<int> first_conflict(const std::vector<Track>& tracks, const PlantState& ego,
                                         const PlannedPath& path, const PlannerConfig& cfg) {
  const double s0 = path_frame(path, ego.pose.position()).s;
  const int n = cfg.steps();
  for (int k = 0; k <= n; ++k) {
    const double t = k * cfg.step;
    const double travel = ego.speed * t;
    const Vec2 e = path.point_at(s0 + travel);
    for (const auto& tr : tracks) {
      const bool close = (tr.position + tr.velocity * t - e).norm() <= cfg.radius;
      if (cfg.rule == ConflictRule::conjunction ? close && travel <= cfg.travel_gate : close) return k;
    }
  }
  if (cfg.rule == ConflictRule::independent) {
    for (const auto& tr : tracks) {
      const auto f = path_frame(path, tr.position);
      if (f.s >= s0 && f.s - s0 <= cfg.travel_gate && std::abs(f.e) <= cfg.radius) return 0;
    }
  }
  return std::nullopt;
}

inline AgentCommand plan_speed(const std::vector<Track>& tracks, const PlantState& ego, const PlannedPath& path,
                               const PlannerConfig& cfg = {}) {
  if (!(cfg.step > 0 && cfg.horizon > 0 && cfg.radius > 0 && cfg.travel_gate > 0 && cfg.cruise > 0))
    throw ValidationError("planner: parameters must be positive");
  AgentCommand c;
  c.desired_speed = first_conflict(tracks, ego, path, cfg) ? 0.0 : cfg.cruise;
  return c;
}

// ---- agents ------------------------------------------------------------------

struct AgentObservation {
  const FrameRGBD* frame = nullptr;
  PlantState ego;
  const PlannedPath* path = nullptr;
  double t = 0.0;
  long tick = 0;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual AgentCommand step(const AgentObservation& obs) = 0;
  virtual std::string name() const = 0;
  /// Optional per-tick diagnostics for the tick log.
  virtual nlohmann::ordered_json debug_state() const { return nullptr; }
};

class ConstantCruiseAgent : public Agent {
 public:
  explicit ConstantCruiseAgent(double cruise = 2.0) : cruise_(cruise) {}
  AgentCommand step(const AgentObservation&) override {
    AgentCommand c;
    c.desired_speed = cruise_;
    return c;
  }
  std::string name() const override { return "constant"; }

 private:
  double cruise_;
};

struct ModularConfig {
  DetectorConfig detector;
  TrackerConfig tracker;
  PlannerConfig planner;
};

class ModularAgent : public Agent {
 public:
  explicit ModularAgent(ModularConfig cfg = {}) : cfg_(cfg) {}

  AgentCommand step(const AgentObservation& obs) override {
    if (!obs.frame || !obs.path) throw ValidationError("modular agent: observation needs a frame and a path");
    const auto dets = detect_obstacles(*obs.frame, obs.ego.pose, *obs.path, cfg_.detector);
    std::vector<Vec2> world;
    world.reserve(dets.size());
    for (const auto& d : dets) world.push_back(obs.ego.pose.to_world(d.position));
    const double dt = last_t_ ? obs.t - *last_t_ : cfg_.planner.step;
    last_t_ = obs.t;
    const auto m = associate_greedy(tracks_, world, cfg_.tracker.gate);
    tracks_ = update_tracks(tracks_, m, world, dt > 0.0 ? dt : 1e-3, cfg_.tracker, next_id_);
    last_detections_ = dets;
    return plan_speed(tracks_, obs.ego, *obs.path, cfg_.planner);
  }

  std::string name() const override { return "modular"; }
  nlohmann::ordered_json debug_state() const override {
    auto tracks = nlohmann::ordered_json::array();
    for (const auto& t : tracks_)
      tracks.push_back({{"id", t.id}, {"x", t.position.x()}, {"y", t.position.y()}, {"vx", t.velocity.x()},
                        {"vy", t.velocity.y()}, {"misses", t.misses}});
    return {{"detections", last_detections_.size()}, {"tracks", tracks}};
  }
  const std::vector<Track>& tracks() const { return tracks_; }
  const std::vector<Detection>& last_detections() const { return last_detections_; }

 private:
  ModularConfig cfg_;
  std::vector<Track> tracks_;
  std::vector<Detection> last_detections_;
  std::optional<double> last_t_;
  int next_id_ = 0;
};

}  // namespace mrsim
