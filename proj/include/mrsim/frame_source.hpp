#pragma once

// Where "real" camera frames come from: a recorded RGB-D stream on disk, or a
// procedural world ray-cast on demand from the plant's camera pose.
//
// Stream layout
//   manifest.json     {width, height, fx, fy, cx, cy, near, far, frame_count, depth_format: "f32le"}
//   color/%06d.png    8-bit sRGB
//   depth/%06d.bin    row-major little-endian float32 metres, 0 = invalid
//   poses.csv         index,t,x,y,z,qx,qy,qz,qw  (camera -> world, optical axes x right / y down / z forward)

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mrsim/compositor.hpp"
#include "mrsim/image_io.hpp"

namespace mrsim {

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  /// Frame for tick `index` at simulation time `t`. `vehicle_cam` is the
  /// camera pose implied by the plant; replay sources ignore it.
  virtual FrameRGBD frame(long index, double t, const Pose3& vehicle_cam) = 0;
  virtual const CameraModel& camera() const = 0;
  virtual bool replay() const = 0;
};

// ---- replay ------------------------------------------------------------------

namespace detail {

inline std::string frame_name(long i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06ld.%s", i, ext);
  return buf;
}

inline ImageF decode_depth_f32le(std::span<const std::uint8_t> bytes, int w, int h, const std::string& name) {
  const std::size_t expected = static_cast<std::size_t>(w) * h * 4;
  if (bytes.size() != expected)
    throw IoError(name + ": depth file has " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(expected));
  ImageF d(w, h);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) | static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                      static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                      static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    d.data()[i] = std::bit_cast<float>(u);
  }
  return d;
}

inline std::vector<std::uint8_t> encode_depth_f32le(const ImageF& d) {
  std::vector<std::uint8_t> out(d.data().size() * 4);
  for (std::size_t i = 0; i < d.data().size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(d.data()[i]);
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
  }
  return out;
}

}  // namespace detail

struct StreamFrame {
  double t = 0.0;
  Pose3 cam_pose;
};

/// Validated recorded stream. Frames are decoded on demand; once the stream
/// runs out the last frame is held.
class ReplaySource : public FrameSource {
 public:
  const CameraModel& camera() const override { return cam_; }
  bool replay() const override { return true; }
  long frame_count() const { return static_cast<long>(poses_.size()); }
  const std::vector<StreamFrame>& poses() const { return poses_; }
  const std::filesystem::path& directory() const { return dir_; }

  /// Raw frame i with its recorded timestamp and pose.
  FrameRGBD load(long i) const {
    if (i < 0 || i >= frame_count()) throw IoError("stream: frame index out of range");
    FrameRGBD f;
    f.cam = cam_;
    f.cam_pose = poses_[i].cam_pose;
    f.timestamp = poses_[i].t;
    const auto cpath = dir_ / "color" / detail::frame_name(i, "png");
    f.color = read_png(cpath);
    if (!f.color.same_size(cam_.width, cam_.height))
      throw IoError(cpath.string() + ": image size does not match the manifest");
    const auto dpath = dir_ / "depth" / detail::frame_name(i, "bin");
    f.depth = detail::decode_depth_f32le(read_file_bytes(dpath), cam_.width, cam_.height, dpath.string());
    for (float d : f.depth.data())
      if (!(d >= 0.0f)) throw IoError(dpath.string() + ": negative or NaN depth");
    return f;
  }

  /// Latest recorded frame at or before `t` seconds into the stream; holds the
  /// last frame once the recording runs out. The tick index is not used.
  long index_at(double t) const {
    const double t0 = poses_.front().t;
    const auto it = std::upper_bound(poses_.begin(), poses_.end(), t + 1e-9,
                                     [t0](double v, const StreamFrame& f) { return v < f.t - t0; });
    return std::max(0L, static_cast<long>(it - poses_.begin()) - 1);
  }

  FrameRGBD frame(long, double t, const Pose3&) override {
    FrameRGBD f = load(index_at(t));
    f.timestamp = t;  // re-based to simulation time
    return f;
  }

 private:
  friend ReplaySource ingest_stream(const std::filesystem::path& dir);
  std::filesystem::path dir_;
  CameraModel cam_;
  std::vector<StreamFrame> poses_;
};

inline ReplaySource ingest_stream(const std::filesystem::path& dir) {
  using nlohmann::json;
  ReplaySource src;
  src.dir_ = dir;
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw IoError(mpath.string() + ": missing manifest");
  json m;
  try {
    m = json::parse(read_text_file(mpath));
    src.cam_.width = m.at("width").get<int>();
    src.cam_.height = m.at("height").get<int>();
    src.cam_.fx = m.at("fx").get<double>();
    src.cam_.fy = m.at("fy").get<double>();
    src.cam_.cx = m.at("cx").get<double>();
    src.cam_.cy = m.at("cy").get<double>();
    src.cam_.near = m.value("near", 0.1);
    src.cam_.far = m.value("far", 80.0);
  } catch (const json::exception& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  try {
    src.cam_.validate();
  } catch (const ValidationError& e) {
    throw IoError(mpath.string() + ": " + e.what());
  }
  if (m.value("depth_format", std::string("f32le")) != "f32le") throw IoError(mpath.string() + ": unsupported depth_format");
  const long count = m.value("frame_count", -1L);
  if (count <= 0) throw IoError(mpath.string() + ": frame_count must be positive");

  const auto ppath = dir / "poses.csv";
  std::istringstream csv(read_text_file(ppath));
  std::string line;
  long expect = 0;
  double last_t = -kInf;
  while (std::getline(csv, line)) {
    if (line.empty() || line.starts_with("index")) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    long idx;
    double t, x, y, z, qx, qy, qz, qw;
    if (!(ls >> idx >> t >> x >> y >> z >> qx >> qy >> qz >> qw))
      throw IoError(ppath.string() + ": malformed line '" + line + "'");
    if (idx != expect) throw IoError(ppath.string() + ": expected index " + std::to_string(expect));
    if (t < last_t) throw IoError(ppath.string() + ": timestamps must be nondecreasing");
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (std::abs(q.norm() - 1.0) > 1e-3) throw IoError(ppath.string() + ": quaternion not normalized at " + std::to_string(idx));
    StreamFrame f;
    f.t = t;
    f.cam_pose.rotation = q.normalized().toRotationMatrix();
    f.cam_pose.translation = Vec3(x, y, z);
    src.poses_.push_back(f);
    last_t = t;
    ++expect;
  }
  if (static_cast<long>(src.poses_.size()) != count)
    throw IoError(ppath.string() + ": " + std::to_string(src.poses_.size()) + " poses but manifest says " +
                  std::to_string(count));
  for (long i = 0; i < count; ++i) {
    const auto c = dir / "color" / detail::frame_name(i, "png");
    const auto d = dir / "depth" / detail::frame_name(i, "bin");
    if (!std::filesystem::exists(c)) throw IoError(c.string() + ": missing");
    if (!std::filesystem::exists(d)) throw IoError(d.string() + ": missing");
    const auto size = std::filesystem::file_size(d);
    if (size != static_cast<std::uintmax_t>(src.cam_.width) * src.cam_.height * 4)
      throw IoError(d.string() + ": depth file has " + std::to_string(size) + " bytes, expected " +
                    std::to_string(static_cast<std::uintmax_t>(src.cam_.width) * src.cam_.height * 4));
  }
  return src;
}

/// Writes frames in the stream layout (used for fixtures and frame dumps).
inline void write_stream(const std::filesystem::path& dir, const std::vector<FrameRGBD>& frames) {
  if (frames.empty()) throw ValidationError("write_stream: no frames");
  std::filesystem::create_directories(dir / "color");
  std::filesystem::create_directories(dir / "depth");
  const auto& c = frames.front().cam;
  nlohmann::ordered_json m = {{"width", c.width}, {"height", c.height}, {"fx", c.fx},   {"fy", c.fy},
                              {"cx", c.cx},       {"cy", c.cy},         {"near", c.near}, {"far", c.far},
                              {"frame_count", frames.size()},           {"depth_format", "f32le"}};
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
  std::ostringstream csv;
  csv.precision(17);
  csv << "index,t,x,y,z,qx,qy,qz,qw\n";
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (!(f.cam == c)) throw ValidationError("write_stream: camera model changes mid-stream");
    write_png(dir / "color" / detail::frame_name(static_cast<long>(i), "png"), f.color);
    write_file_bytes(dir / "depth" / detail::frame_name(static_cast<long>(i), "bin"), detail::encode_depth_f32le(f.depth));
    const Eigen::Quaterniond q(f.cam_pose.rotation);
    const Vec3& t = f.cam_pose.translation;
    csv << i << ',' << f.timestamp << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.x() << ',' << q.y()
        << ',' << q.z() << ',' << q.w() << '\n';
  }
  write_text_file(dir / "poses.csv", csv.str());
}

// ---- synthetic world ---------------------------------------------------------

/// Real (non-virtual) box in the synthetic world.
struct RealBox {
  Obb2 footprint;
  double z0 = 0.0;
  double z1 = 1.0;
  Rgb color = Rgb(0.6, 0.6, 0.6);  // linear
};

struct SyntheticWorld {
  double ground_z = 0.0;
  std::vector<RealBox> boxes;
  Rgb sky = Rgb(0.45, 0.6, 0.85);
  Rgb ground_a = Rgb(0.20, 0.20, 0.21);
  Rgb ground_b = Rgb(0.26, 0.26, 0.27);
  double tile = 2.0;
  LightEnvironment light;
};

namespace detail {

/// Slab test against an oriented box; returns entry distance and outward normal.
inline std::optional<std::pair<double, Vec3>> ray_box(const Vec3& o, const Vec3& d, const RealBox& b) {
  const Pose2& c = b.footprint.center;
  const Vec2 lo2 = c.to_local(Vec2(o.x(), o.y()));
  const Vec2 dl(d.x() * std::cos(c.heading) + d.y() * std::sin(c.heading),
                -d.x() * std::sin(c.heading) + d.y() * std::cos(c.heading));
  const double ol[3] = {lo2.x(), lo2.y(), o.z()};
  const double dd[3] = {dl.x(), dl.y(), d.z()};
  const double lo[3] = {-b.footprint.half_length, -b.footprint.half_width, b.z0};
  const double hi[3] = {b.footprint.half_length, b.footprint.half_width, b.z1};
  double tmin = -kInf, tmax = kInf;
  int axis = -1;
  double sign = 0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(dd[k]) < 1e-15) {
      if (ol[k] < lo[k] || ol[k] > hi[k]) return std::nullopt;
      continue;
    }
    double t0 = (lo[k] - ol[k]) / dd[k], t1 = (hi[k] - ol[k]) / dd[k];
    double s = -1;
    if (t0 > t1) std::swap(t0, t1), s = 1;
    if (t0 > tmin) tmin = t0, axis = k, sign = s;
    tmax = std::min(tmax, t1);
  }
  if (tmin > tmax || tmax <= 0.0 || tmin <= 0.0 || axis < 0) return std::nullopt;
  Vec3 n = Vec3::Zero();
  if (axis == 2) {
    n.z() = sign;
  } else {
    const Vec2 ln = axis == 0 ? Vec2(sign, 0) : Vec2(0, sign);
    const Vec2 w = ln.x() * c.forward() + ln.y() * c.left();
    n = Vec3(w.x(), w.y(), 0);
  }
  return std::make_pair(tmin, n);
}

}  // namespace detail

/// Ray-casts the synthetic world: depth is camera z, colour is a lightly shaded
/// Lambert surface encoded to sRGB. Sky pixels get depth 0 (no return).
inline FrameRGBD render_synthetic(const SyntheticWorld& w, const Pose3& cam_pose, const CameraModel& cam, double t = 0.0) {
  cam.validate();
  FrameRGBD f;
  f.cam = cam;
  f.cam_pose = cam_pose;
  f.timestamp = t;
  f.color = ImageRgb8(cam.width, cam.height);
  f.depth = ImageF(cam.width, cam.height, 0.0f);
  const Vec3 o = cam_pose.translation;
  const Vec3 sun = w.light.sun_dir;
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 rc = cam.ray(u + 0.5, v + 0.5);  // z = 1, so ray parameter = camera depth
      const Vec3 d = cam_pose.rotation * rc;
      double best = kInf;
      Rgb albedo = w.sky;
      Vec3 n = Vec3::UnitZ();
      bool hit = false;
      if (d.z() < 0.0) {
        const double tg = (w.ground_z - o.z()) / d.z();
        if (tg > 0.0) {
          best = tg;
          hit = true;
          const Vec3 p = o + tg * d;
          const long ix = static_cast<long>(std::floor(p.x() / w.tile)), iy = static_cast<long>(std::floor(p.y() / w.tile));
          albedo = ((ix + iy) & 1) ? w.ground_b : w.ground_a;
        }
      }
      for (const auto& b : w.boxes) {
        if (auto h = detail::ray_box(o, d, b); h && h->first < best) {
          best = h->first;
          albedo = b.color;
          n = h->second;
          hit = true;
        }
      }
      Rgb c = albedo;
      if (hit) {
        const double lambert = std::max(0.0, n.dot(sun));
        c = albedo.cwiseProduct(w.light.ambient_radiance + w.light.sun_radiance * lambert * 0.25);
        // Beyond the sensor range there is colour but no depth return.
        if (best >= cam.near && best <= cam.far) f.depth.at(u, v) = static_cast<float>(best);
      }
      for (int k = 0; k < 3; ++k) f.color.at(u, v, k) = encode_srgb8(c[k]);
    }
  }
  return f;
}

class SyntheticSource : public FrameSource {
 public:
  SyntheticSource(SyntheticWorld world, CameraModel cam) : world_(std::move(world)), cam_(cam) { cam_.validate(); }
  FrameRGBD frame(long, double t, const Pose3& vehicle_cam) override {
    return render_synthetic(world_, vehicle_cam, cam_, t);
  }
  const CameraModel& camera() const override { return cam_; }
  bool replay() const override { return false; }
  const SyntheticWorld& world() const { return world_; }

 private:
  SyntheticWorld world_;
  CameraModel cam_;
};

}  // namespace mrsim
