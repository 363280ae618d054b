#pragma once

// Physically based shading: ambient sky term plus a single directional sun
// through a Cook-Torrance BRDF (Lambert diffuse, GGX/Smith/Schlick specular).
//
//   L(x, wo) = La * base_color + lit * Ls * fr(x, wo, ws) * max(ws . n, 0)
//   fr       = kd * base_color / pi + ks * D * F * G / (4 (n.l)(n.v))
//
// Roughness is perceptual; the GGX width is alpha = roughness^2.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "mrsim/geometry.hpp"
#include "mrsim/image.hpp"

namespace mrsim {

using Rgb = Eigen::Vector3d;

struct LightEnvironment {
  Vec3 sun_dir = Vec3(0.0, 0.0, 1.0);  // unit, surface -> sun
  Rgb sun_radiance = Rgb(3.0, 3.0, 3.0);
  Rgb ambient_radiance = Rgb(0.3, 0.3, 0.35);

  void validate() const {
    if (std::abs(sun_dir.norm() - 1.0) > 1e-6) throw ValidationError("lighting.sun_dir must be unit length");
    if ((sun_radiance.array() < 0.0).any()) throw ValidationError("lighting.sun_rgb must be non-negative");
    if ((ambient_radiance.array() < 0.0).any())
      throw ValidationError("lighting.ambient_rgb must be non-negative");
  }

  friend bool operator==(const LightEnvironment&, const LightEnvironment&) = default;
};

/// Texture in linear space, sampled bilinearly with wrap-around addressing.
class Texture {
 public:
  Texture(const ImageRgb8& image, bool srgb) : width_(image.width()), height_(image.height()) {
    texels_.resize(image.pixel_count());
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        Rgb c;
        for (int k = 0; k < 3; ++k) {
          const std::uint8_t v = image.at(x, y, k);
          c[k] = srgb ? decode_srgb8(v) : v / 255.0;
        }
        texels_[static_cast<std::size_t>(y) * width_ + x] = c;
      }
    }
  }

  Rgb sample(double u, double v) const {
    const double fx = (u - std::floor(u)) * width_ - 0.5;
    const double fy = (1.0 - (v - std::floor(v))) * height_ - 0.5;
    const double x0f = std::floor(fx), y0f = std::floor(fy);
    const double tx = fx - x0f, ty = fy - y0f;
    const int x0 = wrap(static_cast<int>(x0f), width_), x1 = wrap(x0 + 1, width_);
    const int y0 = wrap(static_cast<int>(y0f), height_), y1 = wrap(y0 + 1, height_);
    return (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x1, y0)) +
           ty * ((1 - tx) * at(x0, y1) + tx * at(x1, y1));
  }

 private:
  static int wrap(int i, int n) { return ((i % n) + n) % n; }
  const Rgb& at(int x, int y) const { return texels_[static_cast<std::size_t>(y) * width_ + x]; }

  int width_;
  int height_;
  std::vector<Rgb, Eigen::aligned_allocator<Rgb>> texels_;
};

/// Material parameters evaluated at one surface point.
struct SurfaceSample {
  Rgb base_color = Rgb(0.8, 0.8, 0.8);
  double roughness = 0.5;
  double metallic = 0.0;
  double k_d = 1.0;
  double k_s = 1.0;
};

struct Material {
  Rgb base_color = Rgb(0.8, 0.8, 0.8);
  double roughness = 0.5;
  double metallic = 0.0;
  double k_d = 1.0;
  double k_s = 1.0;
  std::shared_ptr<const Texture> base_color_map;
  std::shared_ptr<const Texture> roughness_map;  // red channel, linear
  std::shared_ptr<const Texture> metallic_map;   // red channel, linear

  SurfaceSample sample(double u, double v) const {
    SurfaceSample s;
    s.base_color = base_color_map ? base_color_map->sample(u, v) : base_color;
    s.roughness = roughness_map ? roughness_map->sample(u, v).x() : roughness;
    s.metallic = metallic_map ? metallic_map->sample(u, v).x() : metallic;
    s.base_color = s.base_color.cwiseMax(0.0).cwiseMin(1.0);
    s.roughness = std::clamp(s.roughness, 0.0, 1.0);
    s.metallic = std::clamp(s.metallic, 0.0, 1.0);
    s.k_d = std::clamp(k_d, 0.0, 1.0);
    s.k_s = std::clamp(k_s, 0.0, 1.0);
    return s;
  }
};

namespace brdf {

inline constexpr double kMinAlpha = 1e-3;
inline constexpr double kDielectricF0 = 0.04;

inline double alpha_from_roughness(double roughness) {
  return std::max(roughness * roughness, kMinAlpha);
}

/// GGX / Trowbridge-Reitz normal distribution.
inline double ggx_d(double n_dot_h, double alpha) {
  const double a2 = alpha * alpha;
  const double k = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
  return a2 / (kPi * k * k);
}

/// Smith masking for one direction under GGX.
inline double smith_g1(double n_dot_x, double alpha) {
  const double a2 = alpha * alpha;
  return 2.0 * n_dot_x / (n_dot_x + std::sqrt(a2 + (1.0 - a2) * n_dot_x * n_dot_x));
}

inline Rgb fresnel_schlick(const Rgb& f0, double v_dot_h) {
  const double m = std::pow(std::clamp(1.0 - v_dot_h, 0.0, 1.0), 5.0);
  return f0 + (Rgb::Ones() - f0) * m;
}

inline Rgb f0_for(const SurfaceSample& s) {
  return Rgb::Constant(kDielectricF0) * (1.0 - s.metallic) + s.base_color * s.metallic;
}

/// Full reflectance f_r(wo, ws) for unit n, wo, ws.
inline Rgb evaluate(const Vec3& n, const Vec3& wo, const Vec3& ws, const SurfaceSample& s) {
  const double n_dot_l = n.dot(ws);
  const double n_dot_v = n.dot(wo);
  Rgb fr = s.k_d * s.base_color / kPi;
  if (n_dot_l <= 0.0 || n_dot_v <= 0.0 || s.k_s == 0.0) return fr;
  const Vec3 h = (wo + ws).normalized();
  const double alpha = alpha_from_roughness(s.roughness);
  const double d = ggx_d(std::max(n.dot(h), 0.0), alpha);
  const double g = smith_g1(n_dot_l, alpha) * smith_g1(n_dot_v, alpha);
  const Rgb f = fresnel_schlick(f0_for(s), std::max(wo.dot(h), 0.0));
  fr += s.k_s * f * (d * g / (4.0 * n_dot_l * n_dot_v));
  return fr;
}

}  // namespace brdf

/// Outgoing linear radiance at a surface point. `lit` is the shadow factor in [0,1].
inline Rgb shade(const Vec3& /*x*/, const Vec3& n, const Vec3& wo, const SurfaceSample& mat,
                 const LightEnvironment& light, double lit) {
  Rgb out = light.ambient_radiance.cwiseProduct(mat.base_color);
  const double cos_s = n.dot(light.sun_dir);
  if (cos_s > 0.0 && lit > 0.0) {
    const Rgb fr = brdf::evaluate(n, wo, light.sun_dir, mat);
    out += lit * light.sun_radiance.cwiseProduct(fr) * cos_s;
  }
  return out.cwiseMax(0.0);
}

}  // namespace mrsim
