#pragma once

// Scan conversion shared by the camera pass and the shadow pass.
//
// Coverage is sampled at pixel centres with a top-left fill rule, so pixels on
// an edge shared by two triangles are drawn exactly once. Vertices carry an
// `inv_w` term (1/z for perspective, 1 for orthographic); barycentrics handed
// to the fragment callback are already perspective-corrected.

#include <algorithm>
#include <array>
#include <cmath>

#include "mrsim/geometry.hpp"

namespace mrsim::raster {

struct ScreenVertex {
  double x;
  double y;
  double depth;
  double inv_w;
};

/// Row/column window a triangle may write into: [x_begin, x_end) x [y_begin, y_end).
struct Window {
  int x_begin, x_end, y_begin, y_end;
};

namespace detail {

inline double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

/// Top or left edge for the positive-area orientation used below (image y down).
inline bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

inline bool inside(double e, bool tl) { return e > 0.0 || (e == 0.0 && tl); }

}  // namespace detail

/// Calls `frag(x, y, b0, b1, b2, depth)` for every covered pixel centre in `win`.
/// Degenerate (zero-area) triangles produce no fragments.
template <typename Fragment>
void triangle(std::array<ScreenVertex, 3> v, const Window& win, Fragment&& frag) {
  double area = detail::edge(v[0], v[1], v[2].x, v[2].y);
  std::array<int, 3> order{0, 1, 2};
  if (area < 0.0) {
    std::swap(v[1], v[2]);
    std::swap(order[1], order[2]);
    area = -area;
  }
  if (!(area > 0.0)) return;

  const double min_x = std::min({v[0].x, v[1].x, v[2].x});
  const double max_x = std::max({v[0].x, v[1].x, v[2].x});
  const double min_y = std::min({v[0].y, v[1].y, v[2].y});
  const double max_y = std::max({v[0].y, v[1].y, v[2].y});
  // Pixel i is sampled at i + 0.5.
  const int x0 = std::max(win.x_begin, static_cast<int>(std::ceil(min_x - 0.5)));
  const int x1 = std::min(win.x_end - 1, static_cast<int>(std::floor(max_x - 0.5)));
  const int y0 = std::max(win.y_begin, static_cast<int>(std::ceil(min_y - 0.5)));
  const int y1 = std::min(win.y_end - 1, static_cast<int>(std::floor(max_y - 0.5)));
  if (x0 > x1 || y0 > y1) return;

  const bool tl0 = detail::top_left(v[1], v[2]);
  const bool tl1 = detail::top_left(v[2], v[0]);
  const bool tl2 = detail::top_left(v[0], v[1]);
  const double inv_area = 1.0 / area;

  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double e0 = detail::edge(v[1], v[2], px, py);
      const double e1 = detail::edge(v[2], v[0], px, py);
      const double e2 = detail::edge(v[0], v[1], px, py);
      if (!detail::inside(e0, tl0) || !detail::inside(e1, tl1) || !detail::inside(e2, tl2)) continue;
      const double l0 = e0 * inv_area, l1 = e1 * inv_area, l2 = e2 * inv_area;
      const double w0 = l0 * v[0].inv_w, w1 = l1 * v[1].inv_w, w2 = l2 * v[2].inv_w;
      const double wsum = w0 + w1 + w2;
      const std::array<double, 3> pc{w0 / wsum, w1 / wsum, w2 / wsum};
      const double depth = pc[0] * v[0].depth + pc[1] * v[1].depth + pc[2] * v[2].depth;
      std::array<double, 3> b{};
      for (int k = 0; k < 3; ++k) b[order[k]] = pc[k];
      frag(x, y, b[0], b[1], b[2], depth);
    }
  }
}

/// Camera-space vertex with barycentric coordinates relative to the source triangle.
struct ClipVertex {
  Vec3 p;
  std::array<double, 3> bary;
};

/// Clips a camera-space triangle to z >= near (Sutherland-Hodgman, single plane).
/// Returns the number of output vertices (0, 3 or 4) written into `out`.
inline int clip_near(const std::array<Vec3, 3>& tri, double near, std::array<ClipVertex, 4>& out) {
  const std::array<ClipVertex, 3> in = {{{tri[0], {1, 0, 0}}, {tri[1], {0, 1, 0}}, {tri[2], {0, 0, 1}}}};
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const ClipVertex& a = in[i];
    const ClipVertex& b = in[(i + 1) % 3];
    const bool a_in = a.p.z() >= near;
    const bool b_in = b.p.z() >= near;
    if (a_in) out[n++] = a;
    if (a_in != b_in) {
      const double t = (near - a.p.z()) / (b.p.z() - a.p.z());
      ClipVertex c;
      c.p = a.p + t * (b.p - a.p);
      c.p.z() = near;
      for (int k = 0; k < 3; ++k) c.bary[k] = a.bary[k] + t * (b.bary[k] - a.bary[k]);
      out[n++] = c;
    }
  }
  return n;
}

}  // namespace mrsim::raster
