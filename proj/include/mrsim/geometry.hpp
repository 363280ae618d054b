#pragma once

// Shared geometric vocabulary.
//
// Conventions used throughout mrsim:
//   world frame   x-east, y-north, z-up, right-handed
//   camera frame  x-right, y-down, z-forward (optical axis)
//   image         origin at the top-left corner, u to the right, v down;
//                 pixel (i, j) covers [i, i+1) x [j, j+1), its centre is (i+0.5, j+0.5)

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "mrsim/error.hpp"

namespace mrsim {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Wraps an angle into (-pi, pi].
inline double normalize_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

/// Rigid transform body -> world: p_world = rotation * p_body + translation.
struct Pose3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation); }

  bool valid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double heading_) : x(x_), y(y_), heading(normalize_angle(heading_)) {}

  Vec2 position() const { return {x, y}; }
  Vec2 forward() const { return {std::cos(heading), std::sin(heading)}; }
  Vec2 left() const { return {-std::sin(heading), std::cos(heading)}; }

  /// Maps a point from this pose's local frame (x forward, y left) to the world.
  Vec2 to_world(const Vec2& local) const {
    return position() + local.x() * forward() + local.y() * left();
  }
  Vec2 to_local(const Vec2& world) const {
    const Vec2 d = world - position();
    return {d.dot(forward()), d.dot(left())};
  }

  friend bool operator==(const Pose2&, const Pose2&) = default;
};

/// Lifts a planar pose plus height to a body->world transform (rotation about +z).
inline Pose3 lift(const Pose2& p, double z) {
  Pose3 out;
  out.rotation = Eigen::AngleAxisd(p.heading, Vec3::UnitZ()).toRotationMatrix();
  out.translation = Vec3(p.x, p.y, z);
  return out;
}

struct CameraModel {
  double fx = 400.0, fy = 400.0;
  double cx = 320.0, cy = 180.0;
  int width = 640, height = 360;
  double near = 0.1, far = 80.0;

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0)) throw ValidationError("camera: fx and fy must be positive");
    if (!(near > 0.0 && near < far)) throw ValidationError("camera: require 0 < near < far");
    if (width <= 0 || height <= 0) throw ValidationError("camera: width and height must be positive");
  }

  /// Unnormalized ray direction through continuous pixel coordinate (u, v), z component 1.
  Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Camera rigidly mounted on a vehicle, looking along the vehicle heading,
/// pitched down by `pitch` radians.
inline Pose3 vehicle_camera_pose(const Pose2& vehicle, double mount_height, double pitch = 0.0) {
  const double c = std::cos(vehicle.heading), s = std::sin(vehicle.heading);
  const Vec3 fwd(c, s, 0.0);
  const Vec3 right(s, -c, 0.0);
  const Vec3 down(0.0, 0.0, -1.0);
  // Pitch rotates the optical axis toward "down" about the right axis.
  const Vec3 z_cam = std::cos(pitch) * fwd + std::sin(pitch) * down;
  const Vec3 y_cam = std::cos(pitch) * down - std::sin(pitch) * fwd;
  Pose3 pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = y_cam;
  pose.rotation.col(2) = z_cam;
  pose.translation = Vec3(vehicle.x, vehicle.y, mount_height);
  return pose;
}

struct PixelHit {
  double u;
  double v;
  double depth;
};

inline std::optional<PixelHit> project_point(const Vec3& p_world, const Pose3& cam_pose,
                                             const CameraModel& cam) {
  const Vec3 pc = cam_pose.apply_inverse(p_world);
  if (pc.z() <= cam.near || pc.z() > cam.far) return std::nullopt;
  return PixelHit{cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy, pc.z()};
}

/// Inverse of project_point: continuous pixel + depth -> world point.
inline Vec3 back_project(double u, double v, double depth, const Pose3& cam_pose,
                         const CameraModel& cam) {
  return cam_pose.apply(cam.ray(u, v) * depth);
}

struct Obb2 {
  Pose2 center;
  double half_length = 0.5;  // along heading
  double half_width = 0.5;

  std::array<Vec2, 4> corners() const {
    const Vec2 f = center.forward() * half_length;
    const Vec2 l = center.left() * half_width;
    const Vec2 c = center.position();
    return {c + f + l, c - f + l, c - f - l, c + f - l};
  }
  bool contains(const Vec2& p) const {
    const Vec2 local = center.to_local(p);
    return std::abs(local.x()) <= half_length && std::abs(local.y()) <= half_width;
  }
};

/// Separating-axis test over the four edge normals. Touching boxes overlap.
inline bool obb_overlap(const Obb2& a, const Obb2& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const std::array<Vec2, 4> axes = {a.center.forward(), a.center.left(), b.center.forward(),
                                    b.center.left()};
  for (const Vec2& axis : axes) {
    double amin = kInf, amax = -kInf, bmin = kInf, bmax = -kInf;
    for (const Vec2& p : ca) {
      const double d = p.dot(axis);
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const Vec2& p : cb) {
      const double d = p.dot(axis);
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

/// Polyline with cumulative arc length.
class PlannedPath {
 public:
  PlannedPath() = default;

  explicit PlannedPath(std::vector<Vec2> waypoints) : waypoints_(std::move(waypoints)) {
    if (waypoints_.size() < 2) throw ValidationError("path: need at least 2 waypoints");
    arc_.resize(waypoints_.size());
    arc_[0] = 0.0;
    for (std::size_t i = 1; i < waypoints_.size(); ++i) {
      const double d = (waypoints_[i] - waypoints_[i - 1]).norm();
      if (!(d > 0.0)) throw ValidationError("path: consecutive waypoints must be distinct");
      arc_[i] = arc_[i - 1] + d;
    }
  }

  std::span<const Vec2> waypoints() const { return waypoints_; }
  std::span<const double> arc_lengths() const { return arc_; }
  double length() const { return arc_.empty() ? 0.0 : arc_.back(); }
  bool empty() const { return waypoints_.empty(); }
  const Vec2& back() const { return waypoints_.back(); }

  /// Point at arc length s, clamped to the path ends.
  Vec2 point_at(double s) const {
    if (s <= 0.0) return waypoints_.front();
    if (s >= length()) return waypoints_.back();
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - arc_.begin()) - 1;
    const double t = (s - arc_[i]) / (arc_[i + 1] - arc_[i]);
    return waypoints_[i] + t * (waypoints_[i + 1] - waypoints_[i]);
  }

  double heading_at(double s) const {
    std::size_t i = 0;
    if (s >= length()) {
      i = waypoints_.size() - 2;
    } else if (s > 0.0) {
      i = static_cast<std::size_t>(std::upper_bound(arc_.begin(), arc_.end(), s) - arc_.begin()) - 1;
    }
    const Vec2 d = waypoints_[i + 1] - waypoints_[i];
    return std::atan2(d.y(), d.x());
  }

  friend bool operator==(const PlannedPath& a, const PlannedPath& b) {
    return a.waypoints_ == b.waypoints_;
  }

 private:
  std::vector<Vec2> waypoints_;
  std::vector<double> arc_;
};

struct PathFrame {
  double s;            // arc length of the closest point
  double e;            // signed cross-track error, positive left of the path direction
  double heading_ref;  // heading of the segment holding the closest point
};

/// Closest-point frame on the path. Queries beyond either end clamp to the
/// terminal vertex; there e is the lateral offset relative to the end segment.
inline PathFrame path_frame(const PlannedPath& path, const Vec2& p) {
  const auto w = path.waypoints();
  const auto arc = path.arc_lengths();
  const std::size_t nseg = w.size() - 1;

  double best_d2 = kInf;
  PathFrame best{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < nseg; ++i) {
    const Vec2 a = w[i];
    const Vec2 d = w[i + 1] - a;
    const double len2 = d.squaredNorm();
    const double t_raw = (p - a).dot(d) / len2;
    const double t = std::clamp(t_raw, 0.0, 1.0);
    const Vec2 q = a + t * d;
    const double d2 = (p - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      const double len = std::sqrt(len2);
      const Vec2 dir = d / len;
      const Vec2 r = p - q;
      const double cross = dir.x() * r.y() - dir.y() * r.x();
      const bool beyond_end = (i == 0 && t_raw < 0.0) || (i == nseg - 1 && t_raw > 1.0);
      double e = cross;
      if (!beyond_end) {
        const double dist = std::sqrt(d2);
        e = cross > 0.0 ? dist : (cross < 0.0 ? -dist : 0.0);
      }
      best = PathFrame{arc[i] + t * len, e, std::atan2(d.y(), d.x())};
    }
  }
  return best;
}

}  // namespace mrsim
