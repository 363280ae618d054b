#pragma once

// First pass of two-pass shadow mapping: an orthographic depth render of the
// virtual geometry as seen from the sun, plus the Poisson-filtered lookup
// used by the camera pass.

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "mrsim/mesh.hpp"
#include "mrsim/raster.hpp"
#include "mrsim/shading.hpp"

namespace mrsim {

/// A mesh placed in the world, with an optional base-colour override
/// (used for scripted colour changes such as traffic-light state).
struct PosedMesh {
  std::shared_ptr<const Mesh> mesh;
  Pose3 pose;
  std::optional<Rgb> color_override;
};

/// Fixed Poisson-disk pattern on the unit disk, generated once by dart throwing
/// (seed 20230907, min spacing 0.28) and checked in. Taps are used in order.
inline constexpr std::array<std::array<double, 2>, 32> kPoissonDisk = {{
    {+0.387778, -0.504970}, {-0.956741, -0.120614}, {+0.031184, +0.791714}, {+0.279706, -0.245541},
    {-0.755131, +0.626468}, {+0.096919, -0.718324}, {+0.365064, +0.617017}, {+0.843271, -0.035035},
    {-0.471485, -0.567234}, {+0.143821, +0.421483}, {-0.405617, -0.852353}, {+0.764293, -0.310267},
    {-0.548747, +0.072395}, {-0.893070, -0.449870}, {-0.081559, -0.072615}, {-0.440112, +0.359077},
    {+0.408260, -0.872630}, {-0.202771, -0.428186}, {-0.157648, +0.206312}, {+0.668609, +0.217787},
    {-0.425533, +0.799569}, {+0.699867, +0.675995}, {+0.463776, +0.019727}, {+0.647645, -0.622775},
    {+0.358533, +0.912240}, {-0.873646, +0.197915}, {-0.630786, -0.242153}, {+0.897501, +0.428117},
    {+0.144470, +0.133848}, {-0.134902, +0.562555}, {-0.137970, -0.941107}, {-0.180889, +0.981247},
}};

struct ShadowSettings {
  int resolution = 512;
  double ground_margin = 0.5;  // metres of slack around the actors' light-space footprint
  double bias = 0.02;
  int poisson_taps = 16;
  double filter_radius_texels = 1.5;
};

/// Orthographic light-view depth map. Texel (i, j) covers light-space
/// [u_min + i*texel, u_min + (i+1)*texel) along `right` and likewise along `up`.
struct ShadowMap {
  int size = 0;
  std::vector<double> depth;  // row-major size*size; +inf where nothing was drawn
  Vec3 right = Vec3::UnitX();
  Vec3 up = Vec3::UnitY();
  Vec3 forward = -Vec3::UnitZ();  // light travel direction, -sun_dir
  double u_min = 0.0;
  double v_min = 0.0;
  double texel = 1.0;
  double depth_origin = 0.0;

  struct LightPoint {
    double tx;  // continuous texel coordinates
    double ty;
    double depth;
  };

  LightPoint to_light(const Vec3& p) const {
    return {(p.dot(right) - u_min) / texel, (p.dot(up) - v_min) / texel, p.dot(forward) - depth_origin};
  }

  double at(int i, int j) const { return depth[static_cast<std::size_t>(j) * size + i]; }
  bool in_bounds(double tx, double ty) const { return tx >= 0.0 && ty >= 0.0 && tx < size && ty < size; }
};

inline void check_sun(const LightEnvironment& light) {
  if (std::abs(light.sun_dir.z()) < std::sin(1e-3))
    throw ValidationError("degenerate sun: direction parallel to the ground plane");
}

/// Renders the light-view depth of every actor. The map is fit to the actors'
/// light-space bounds plus `ground_margin`.
inline ShadowMap render_shadow_map(std::span<const PosedMesh> actors, const LightEnvironment& light,
                                   const ShadowSettings& settings) {
  check_sun(light);
  if (settings.resolution <= 0) throw ValidationError("shadow map resolution must be positive");
  ShadowMap map;
  map.size = settings.resolution;
  map.depth.assign(static_cast<std::size_t>(map.size) * map.size, kInf);
  map.forward = -light.sun_dir;
  // Any vector not parallel to forward works as a seed for the basis.
  const Vec3 seed = std::abs(map.forward.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  map.right = seed.cross(map.forward).normalized();
  map.up = map.forward.cross(map.right).normalized();

  double umin = kInf, umax = -kInf, vmin = kInf, vmax = -kInf, dmin = kInf;
  std::vector<std::vector<Vec3>> world(actors.size());
  for (std::size_t a = 0; a < actors.size(); ++a) {
    const auto& mesh = *actors[a].mesh;
    world[a].reserve(mesh.vertices.size());
    for (const auto& v : mesh.vertices) {
      const Vec3 w = actors[a].pose.apply(v);
      world[a].push_back(w);
      umin = std::min(umin, w.dot(map.right));
      umax = std::max(umax, w.dot(map.right));
      vmin = std::min(vmin, w.dot(map.up));
      vmax = std::max(vmax, w.dot(map.up));
      dmin = std::min(dmin, w.dot(map.forward));
    }
  }
  if (!std::isfinite(umin)) return map;  // empty scene: everything lit

  const double m = settings.ground_margin;
  const double extent = std::max(umax - umin, vmax - vmin) + 2.0 * m;
  map.texel = extent / map.size;
  map.u_min = 0.5 * (umin + umax) - extent / 2;
  map.v_min = 0.5 * (vmin + vmax) - extent / 2;
  map.depth_origin = dmin - m;

  const raster::Window win{0, map.size, 0, map.size};
  for (std::size_t a = 0; a < actors.size(); ++a) {
    for (const auto& t : actors[a].mesh->triangles) {
      std::array<raster::ScreenVertex, 3> sv{};
      for (int k = 0; k < 3; ++k) {
        const auto lp = map.to_light(world[a][t[k]]);
        sv[k] = {lp.tx, lp.ty, lp.depth, 1.0};
      }
      raster::triangle(sv, win, [&](int x, int y, double, double, double, double d) {
        double& cur = map.depth[static_cast<std::size_t>(y) * map.size + x];
        if (d < cur) cur = d;
      });
    }
  }
  return map;
}

/// Fraction of Poisson taps around p's light-space footprint that see p
/// (map depth + bias >= p's light depth). Points off the map are lit.
inline double shadow_factor(const Vec3& p, const ShadowMap& map, int poisson_taps, double bias,
                            double filter_radius_texels = 1.5) {
  if (poisson_taps < 1) throw ValidationError("poisson_taps must be >= 1");
  const int taps = std::min<int>(poisson_taps, static_cast<int>(kPoissonDisk.size()));
  if (map.size == 0) return 1.0;
  const auto lp = map.to_light(p);
  if (!map.in_bounds(lp.tx, lp.ty)) return 1.0;
  int lit = 0;
  for (int k = 0; k < taps; ++k) {
    const double tx = lp.tx + kPoissonDisk[k][0] * filter_radius_texels;
    const double ty = lp.ty + kPoissonDisk[k][1] * filter_radius_texels;
    if (!map.in_bounds(tx, ty)) {
      ++lit;
      continue;
    }
    const double occ = map.at(static_cast<int>(tx), static_cast<int>(ty));
    if (occ + bias >= lp.depth) ++lit;
  }
  return static_cast<double>(lit) / taps;
}

}  // namespace mrsim
