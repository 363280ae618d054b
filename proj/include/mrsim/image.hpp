#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mrsim/error.hpp"

namespace mrsim {

/// Dense row-major image with `Channels` interleaved samples per pixel.
template <typename T, int Channels>
class Image {
 public:
  using value_type = T;
  static constexpr int kChannels = Channels;

  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height * Channels, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  T& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_ * Channels; }
  const T* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_ * Channels; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_size(int w, int h) const { return width_ == w && height_ == h; }
  template <typename U, int C>
  bool same_size(const Image<U, C>& o) const { return same_size(o.width(), o.height()); }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * Channels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ImageRgb8 = Image<std::uint8_t, 3>;
using ImageRgbf = Image<float, 3>;
using ImageF = Image<float, 1>;
using ImageD = Image<double, 1>;

template <typename A, typename B>
void require_same_size(const A& a, const B& b, const char* what) {
  if (!a.same_size(b)) throw ValidationError(std::string(what) + ": image dimensions differ");
}

/// sRGB transfer function, 8-bit encoded value -> linear [0,1].
inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline const std::array<double, 256>& srgb_decode_table() {
  static const std::array<double, 256> table = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) t[i] = srgb_to_linear(i / 255.0);
    return t;
  }();
  return table;
}

inline double decode_srgb8(std::uint8_t v) { return srgb_decode_table()[v]; }

inline std::uint8_t encode_srgb8(double linear) {
  const double c = linear_to_srgb(std::clamp(linear, 0.0, 1.0));
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// BT.601 luma of an 8-bit RGB pixel, in [0, 255].
inline double luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

}  // namespace mrsim
