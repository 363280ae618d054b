#pragma once

// Insertion rendering: rasterize virtual actors from the ego camera, shade
// them, cast their shadows onto the real ground plane, resolve occlusion
// against the perceived depth and alpha-blend into the camera frame.

#include <chrono>
#include <map>
#include <span>
#include <thread>
#include <vector>

#include "mrsim/geometry.hpp"
#include "mrsim/image.hpp"
#include "mrsim/mesh.hpp"
#include "mrsim/raster.hpp"
#include "mrsim/shading.hpp"
#include "mrsim/shadow.hpp"

namespace mrsim {

struct FrameRGBD {
  ImageRgb8 color;  // sRGB
  ImageF depth;     // metres, 0 = invalid
  Pose3 cam_pose;
  CameraModel cam;
  double timestamp = 0.0;

  void validate() const {
    cam.validate();
    if (!color.same_size(cam.width, cam.height) || !depth.same_size(cam.width, cam.height))
      throw ValidationError("frame: color/depth dimensions do not match the camera model");
    for (float d : depth.data())
      if (!(d >= 0.0f)) throw ValidationError("frame: negative or NaN depth");
  }
};

struct RenderBuffers {
  ImageRgbf color;      // linear RGB in [0,1]
  ImageD depth;         // camera z in metres, +inf where nothing was drawn
  ImageF alpha;         // coverage in [0,1]
  ImageF shadow_factor; // 1 = fully lit

  RenderBuffers() = default;
  RenderBuffers(int w, int h) : color(w, h, 0.0f), depth(w, h, kInf), alpha(w, h, 0.0f), shadow_factor(w, h, 1.0f) {}
  int width() const { return color.width(); }
  int height() const { return color.height(); }
};

struct CompositorConfig {
  ShadowSettings shadow;
  double depth_margin = 0.05;
  double alpha_depth_threshold = 0.5;
  bool ground_shadows = true;
  double ground_z = 0.0;
  int threads = 1;
};

namespace detail {

struct PreparedTriangle {
  std::array<raster::ScreenVertex, 3> screen;
  std::array<std::array<double, 3>, 3> bary;  // per screen vertex, w.r.t. the source triangle
  int actor;
  int tri;
};

struct WorldMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
};

/// Runs fn(row_begin, row_end) over disjoint row bands.
template <typename Fn>
void for_row_bands(int height, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(1, height));
  if (threads == 1) {
    fn(0, height);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    const int r0 = height * t / threads, r1 = height * (t + 1) / threads;
    pool.emplace_back([&fn, r0, r1] { fn(r0, r1); });
  }
}

inline double luminance709(const Rgb& c) { return 0.2126 * c.x() + 0.7152 * c.y() + 0.0722 * c.z(); }

}  // namespace detail

/// Camera pass. Shades covered pixels through shade() with shadow_factor()
/// lookups, and records a shadow-only layer on the configured ground plane.
inline RenderBuffers rasterize(std::span<const PosedMesh> actors, const Pose3& cam_pose,
                               const CameraModel& cam, const LightEnvironment& light,
                               const ShadowMap& map, const CompositorConfig& cfg = {}) {
  cam.validate();
  const int W = cam.width, H = cam.height;
  RenderBuffers out(W, H);

  std::vector<detail::WorldMesh> world(actors.size());
  std::vector<detail::PreparedTriangle> prepared;
  for (std::size_t a = 0; a < actors.size(); ++a) {
    const Mesh& mesh = *actors[a].mesh;
    const Pose3& pose = actors[a].pose;
    auto& wm = world[a];
    wm.vertices.reserve(mesh.vertices.size());
    wm.normals.reserve(mesh.normals.size());
    std::vector<Vec3> camv;
    camv.reserve(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      wm.vertices.push_back(pose.apply(mesh.vertices[i]));
      wm.normals.push_back(pose.rotation * mesh.normals[i]);
      camv.push_back(cam_pose.apply_inverse(wm.vertices.back()));
    }
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      const auto& idx = mesh.triangles[t];
      const std::array<Vec3, 3> tri = {camv[idx[0]], camv[idx[1]], camv[idx[2]]};
      if (tri[0].z() < cam.near && tri[1].z() < cam.near && tri[2].z() < cam.near) continue;
      std::array<raster::ClipVertex, 4> clipped;
      const int n = raster::clip_near(tri, cam.near, clipped);
      std::array<raster::ScreenVertex, 4> sv{};
      for (int k = 0; k < n; ++k) {
        const Vec3& p = clipped[k].p;
        sv[k] = {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy, p.z(), 1.0 / p.z()};
      }
      for (int k = 1; k + 1 < n; ++k) {
        prepared.push_back({{sv[0], sv[k], sv[k + 1]},
                            {clipped[0].bary, clipped[k].bary, clipped[k + 1].bary},
                            static_cast<int>(a),
                            static_cast<int>(t)});
      }
    }
  }

  const Vec3 cam_pos = cam_pose.translation;
  const auto& st = cfg.shadow;

  detail::for_row_bands(H, cfg.threads, [&](int r0, int r1) {
    const int rows = r1 - r0;
    std::vector<double> zbuf(static_cast<std::size_t>(rows) * W, kInf);
    std::vector<int> owner(static_cast<std::size_t>(rows) * W, -1);
    std::vector<std::array<double, 3>> bary(static_cast<std::size_t>(rows) * W);
    const raster::Window win{0, W, r0, r1};
    for (std::size_t p = 0; p < prepared.size(); ++p) {
      const auto& pt = prepared[p];
      raster::triangle(pt.screen, win, [&](int x, int y, double b0, double b1, double b2, double d) {
        if (d > cam.far) return;
        const std::size_t i = static_cast<std::size_t>(y - r0) * W + x;
        if (d < zbuf[i]) {
          zbuf[i] = d;
          owner[i] = static_cast<int>(p);
          for (int k = 0; k < 3; ++k) bary[i][k] = b0 * pt.bary[0][k] + b1 * pt.bary[1][k] + b2 * pt.bary[2][k];
        }
      });
    }

    for (int y = r0; y < r1; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t i = static_cast<std::size_t>(y - r0) * W + x;
        if (owner[i] >= 0) {
          const auto& pt = prepared[owner[i]];
          const auto& actor = actors[pt.actor];
          const Mesh& mesh = *actor.mesh;
          const auto& idx = mesh.triangles[pt.tri];
          const auto& wm = world[pt.actor];
          const auto& b = bary[i];
          const Vec3 pos = b[0] * wm.vertices[idx[0]] + b[1] * wm.vertices[idx[1]] + b[2] * wm.vertices[idx[2]];
          Vec3 n = (b[0] * wm.normals[idx[0]] + b[1] * wm.normals[idx[1]] + b[2] * wm.normals[idx[2]]).normalized();
          const Vec2 uv = b[0] * mesh.uvs[idx[0]] + b[1] * mesh.uvs[idx[1]] + b[2] * mesh.uvs[idx[2]];
          SurfaceSample s = mesh.material.sample(uv.x(), uv.y());
          if (actor.color_override) s.base_color = actor.color_override->cwiseMax(0.0).cwiseMin(1.0);
          const Vec3 wo = (cam_pos - pos).normalized();
          if (n.dot(wo) < 0.0) n = -n;
          const double lit = shadow_factor(pos, map, st.poisson_taps, st.bias, st.filter_radius_texels);
          const Rgb c = shade(pos, n, wo, s, light, lit).cwiseMin(1.0);
          for (int k = 0; k < 3; ++k) out.color.at(x, y, k) = static_cast<float>(c[k]);
          out.depth.at(x, y) = zbuf[i];
          out.alpha.at(x, y) = 1.0f;
          out.shadow_factor.at(x, y) = static_cast<float>(lit);
        } else if (cfg.ground_shadows && map.size > 0) {
          const Vec3 dir = cam_pose.rotation * cam.ray(x + 0.5, y + 0.5);
          if (dir.z() >= 0.0) continue;
          const double t = (cfg.ground_z - cam_pos.z()) / dir.z();
          if (t <= cam.near || t > cam.far) continue;
          const Vec3 g = cam_pos + t * dir;
          const double sf = shadow_factor(g, map, st.poisson_taps, st.bias, st.filter_radius_texels);
          if (sf < 1.0) {
            out.shadow_factor.at(x, y) = static_cast<float>(sf);
            out.depth.at(x, y) = t;
          }
        }
      }
    }
  });
  return out;
}

/// Occlusion test, shadow darkening and linear-space alpha blending.
inline FrameRGBD composite(const FrameRGBD& frame, const RenderBuffers& buf, const LightEnvironment& light,
                           const CompositorConfig& cfg = {}) {
  if (!frame.color.same_size(buf.color) || !frame.depth.same_size(buf.color))
    throw ValidationError("composite: buffer and frame dimensions differ");
  FrameRGBD out = frame;
  const double ambient = detail::luminance709(light.ambient_radiance);
  const double direct = detail::luminance709(light.sun_radiance) * std::max(light.sun_dir.z(), 0.0);
  const int W = buf.width(), H = buf.height();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double dp = frame.depth.at(x, y);
      const double dr = buf.depth.at(x, y);
      const double a = buf.alpha.at(x, y);
      const bool occluded = dp > 0.0 && dp < dr - cfg.depth_margin;
      if (occluded) continue;
      if (a > 0.0) {
        for (int k = 0; k < 3; ++k) {
          const double real = decode_srgb8(frame.color.at(x, y, k));
          out.color.at(x, y, k) = encode_srgb8(a * buf.color.at(x, y, k) + (1.0 - a) * real);
        }
        if (a > cfg.alpha_depth_threshold) {
          out.depth.at(x, y) = static_cast<float>(dp > 0.0 ? std::min(dp, dr) : dr);
        }
      } else if (buf.shadow_factor.at(x, y) < 1.0f && ambient + direct > 0.0) {
        const double ratio = (ambient + buf.shadow_factor.at(x, y) * direct) / (ambient + direct);
        for (int k = 0; k < 3; ++k)
          out.color.at(x, y, k) = encode_srgb8(decode_srgb8(frame.color.at(x, y, k)) * ratio);
      }
    }
  }
  return out;
}

struct StageTimings {
  double shadow_ms = 0.0;
  double raster_ms = 0.0;
  double composite_ms = 0.0;
  double total_ms() const { return shadow_ms + raster_ms + composite_ms; }
};

struct InsertResult {
  FrameRGBD frame;
  RenderBuffers buffers;
  StageTimings timings;
};

/// End-to-end insertion renderer. Keeps the shadow map between calls and only
/// re-renders it when the actor set, their poses, or the light changed.
class InsertRenderer {
 public:
  explicit InsertRenderer(CompositorConfig cfg = {}) : cfg_(std::move(cfg)) {}

  const CompositorConfig& config() const { return cfg_; }

  InsertResult render(const FrameRGBD& frame, std::span<const PosedMesh> actors, const LightEnvironment& light) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
    frame.validate();
    InsertResult r;

    const auto t0 = clock::now();
    if (!cache_valid(actors, light)) {
      shadow_ = render_shadow_map(actors, light, cfg_.shadow);
      remember(actors, light);
    }
    const auto t1 = clock::now();
    r.buffers = rasterize(actors, frame.cam_pose, frame.cam, light, shadow_, cfg_);
    const auto t2 = clock::now();
    r.frame = composite(frame, r.buffers, light, cfg_);
    const auto t3 = clock::now();
    r.timings = {ms(t1 - t0), ms(t2 - t1), ms(t3 - t2)};
    return r;
  }

  const ShadowMap& shadow_map() const { return shadow_; }

 private:
  struct Key {
    std::shared_ptr<const Mesh> mesh;
    Pose3 pose;
  };

  bool cache_valid(std::span<const PosedMesh> actors, const LightEnvironment& light) const {
    if (!have_cache_ || !(light == cached_light_) || actors.size() != cached_.size()) return false;
    for (std::size_t i = 0; i < actors.size(); ++i) {
      if (actors[i].mesh != cached_[i].mesh) return false;
      if (actors[i].pose.rotation != cached_[i].pose.rotation ||
          actors[i].pose.translation != cached_[i].pose.translation)
        return false;
    }
    return true;
  }

  void remember(std::span<const PosedMesh> actors, const LightEnvironment& light) {
    cached_.clear();
    for (const auto& a : actors) cached_.push_back({a.mesh, a.pose});
    cached_light_ = light;
    have_cache_ = true;
  }

  CompositorConfig cfg_;
  ShadowMap shadow_;
  bool have_cache_ = false;
  std::vector<Key> cached_;
  LightEnvironment cached_light_;
};

}  // namespace mrsim
