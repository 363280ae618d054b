#pragma once

// Triangle meshes, Wavefront OBJ ingestion, material sidecars, procedural
// primitives, and the asset library that resolves scenario asset keys.

#include <array>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "mrsim/geometry.hpp"
#include "mrsim/image_io.hpp"
#include "mrsim/shading.hpp"

namespace mrsim {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;  // per vertex, unit
  std::vector<Vec2> uvs;      // per vertex
  std::vector<std::array<std::uint32_t, 3>> triangles;
  Material material;

  std::size_t triangle_count() const { return triangles.size(); }

  void validate() const {
    if (normals.size() != vertices.size() || uvs.size() != vertices.size())
      throw ValidationError("mesh: normals/uvs must match vertex count");
    for (const auto& t : triangles)
      for (auto i : t)
        if (i >= vertices.size()) throw ValidationError("mesh: triangle index out of range");
    for (const auto& n : normals)
      if (std::abs(n.norm() - 1.0) > 1e-6) throw ValidationError("mesh: normals must be unit length");
  }

  /// Appends `other` (geometry only; keeps this mesh's material).
  void append(const Mesh& other, const Vec3& offset = Vec3::Zero()) {
    const auto base = static_cast<std::uint32_t>(vertices.size());
    for (const auto& v : other.vertices) vertices.push_back(v + offset);
    normals.insert(normals.end(), other.normals.begin(), other.normals.end());
    uvs.insert(uvs.end(), other.uvs.begin(), other.uvs.end());
    for (const auto& t : other.triangles) triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }
};

/// Fills per-vertex normals by area-weighted averaging of face normals.
inline void compute_smooth_normals(Mesh& mesh) {
  mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
  for (const auto& t : mesh.triangles) {
    const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (auto i : t) mesh.normals[i] += n;
  }
  for (auto& n : mesh.normals) {
    const double len = n.norm();
    n = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
  }
}

// ---- procedural primitives -------------------------------------------------

/// Axis-aligned box, footprint centred on the origin, bottom face at z = 0.
inline Mesh make_box(double length, double width, double height) {
  Mesh m;
  const double hx = length / 2, hy = width / 2;
  struct Face {
    Vec3 n, u, v;
  };
  const std::array<Face, 6> faces = {{
      {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)},
      {Vec3(-1, 0, 0), Vec3(0, -1, 0), Vec3(0, 0, 1)},
      {Vec3(0, 1, 0), Vec3(-1, 0, 0), Vec3(0, 0, 1)},
      {Vec3(0, -1, 0), Vec3(1, 0, 0), Vec3(0, 0, 1)},
      {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0)},
      {Vec3(0, 0, -1), Vec3(1, 0, 0), Vec3(0, -1, 0)},
  }};
  const Vec3 half(hx, hy, height / 2);
  const Vec3 centre(0, 0, height / 2);
  for (const auto& f : faces) {
    const Vec3 c = centre + f.n.cwiseProduct(half);
    const Vec3 du = f.u.cwiseProduct(half);
    const Vec3 dv = f.v.cwiseProduct(half);
    const auto base = static_cast<std::uint32_t>(m.vertices.size());
    const std::array<std::pair<double, double>, 4> q = {{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}};
    for (const auto& [a, b] : q) {
      m.vertices.push_back(c + a * du + b * dv);
      m.normals.push_back(f.n);
      m.uvs.emplace_back((a + 1) / 2, (b + 1) / 2);
    }
    m.triangles.push_back({base, base + 1, base + 2});
    m.triangles.push_back({base, base + 2, base + 3});
  }
  return m;
}

/// UV sphere centred at (0, 0, radius) so it rests on z = 0.
inline Mesh make_sphere(double radius, int slices, int stacks) {
  Mesh m;
  for (int i = 0; i <= stacks; ++i) {
    const double phi = kPi * i / stacks;
    for (int j = 0; j <= slices; ++j) {
      const double theta = 2 * kPi * j / slices;
      const Vec3 n(std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta), std::cos(phi));
      m.vertices.push_back(n * radius + Vec3(0, 0, radius));
      m.normals.push_back(n);
      m.uvs.emplace_back(static_cast<double>(j) / slices, 1.0 - static_cast<double>(i) / stacks);
    }
  }
  const auto row = static_cast<std::uint32_t>(slices + 1);
  for (int i = 0; i < stacks; ++i) {
    for (int j = 0; j < slices; ++j) {
      const std::uint32_t a = i * row + j, b = a + row;
      if (i != 0) m.triangles.push_back({a, b, a + 1});
      if (i != stacks - 1) m.triangles.push_back({a + 1, b, b + 1});
    }
  }
  return m;
}

/// Capped cylinder along +z from z = 0 to z = height.
inline Mesh make_cylinder(double radius, double height, int slices) {
  Mesh m;
  for (int j = 0; j <= slices; ++j) {
    const double theta = 2 * kPi * j / slices;
    const Vec3 n(std::cos(theta), std::sin(theta), 0);
    for (int k = 0; k < 2; ++k) {
      m.vertices.push_back(n * radius + Vec3(0, 0, k * height));
      m.normals.push_back(n);
      m.uvs.emplace_back(static_cast<double>(j) / slices, k);
    }
  }
  for (int j = 0; j < slices; ++j) {
    const auto a = static_cast<std::uint32_t>(2 * j);
    m.triangles.push_back({a, a + 2, a + 3});
    m.triangles.push_back({a, a + 3, a + 1});
  }
  for (int k = 0; k < 2; ++k) {
    const Vec3 n(0, 0, k ? 1.0 : -1.0);
    const auto centre = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.emplace_back(0, 0, k * height);
    m.normals.push_back(n);
    m.uvs.emplace_back(0.5, 0.5);
    for (int j = 0; j <= slices; ++j) {
      const double theta = 2 * kPi * j / slices;
      m.vertices.emplace_back(radius * std::cos(theta), radius * std::sin(theta), k * height);
      m.normals.push_back(n);
      m.uvs.emplace_back(0.5 + 0.5 * std::cos(theta), 0.5 + 0.5 * std::sin(theta));
    }
    for (int j = 0; j < slices; ++j) {
      const std::uint32_t p = centre + 1 + j;
      if (k) m.triangles.push_back({centre, p, p + 1});
      else m.triangles.push_back({centre, p + 1, p});
    }
  }
  return m;
}

// ---- OBJ -------------------------------------------------------------------

namespace detail {

inline double parse_double(std::string_view tok, std::size_t line) {
  const std::string s(tok);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ParseError("obj line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

inline long parse_index(std::string_view tok, std::size_t count, std::size_t line) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("obj line " + std::to_string(line) + ": bad index");
  if (v < 0) v += static_cast<long>(count) + 1;
  if (v < 1 || v > static_cast<long>(count))
    throw ValidationError("obj line " + std::to_string(line) + ": index out of range");
  return v - 1;
}

}  // namespace detail

/// Parses the triangle subset of Wavefront OBJ: v, vt, vn and f (polygons fan-triangulated).
inline Mesh parse_obj(std::string_view text) {
  std::vector<Vec3> pos, nrm;
  std::vector<Vec2> tex;
  Mesh mesh;
  std::map<std::tuple<long, long, long>, std::uint32_t> remap;
  bool missing_normals = false;

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    std::vector<std::string> toks;
    for (std::string t; ls >> t;) toks.push_back(t);
    if (tag == "v" || tag == "vn") {
      if (toks.size() < 3) throw ParseError("obj line " + std::to_string(lineno) + ": expected 3 components");
      Vec3 v(detail::parse_double(toks[0], lineno), detail::parse_double(toks[1], lineno),
             detail::parse_double(toks[2], lineno));
      (tag == "v" ? pos : nrm).push_back(v);
    } else if (tag == "vt") {
      if (toks.size() < 2) throw ParseError("obj line " + std::to_string(lineno) + ": expected 2 components");
      tex.emplace_back(detail::parse_double(toks[0], lineno), detail::parse_double(toks[1], lineno));
    } else if (tag == "f") {
      if (toks.size() < 3) throw ParseError("obj line " + std::to_string(lineno) + ": face needs 3 vertices");
      std::vector<std::uint32_t> corner;
      for (const auto& t : toks) {
        std::array<std::string_view, 3> parts{};
        std::string_view sv(t);
        for (int k = 0; k < 3; ++k) {
          const auto slash = sv.find('/');
          parts[k] = sv.substr(0, slash);
          if (slash == std::string_view::npos) break;
          sv.remove_prefix(slash + 1);
        }
        const long vi = detail::parse_index(parts[0], pos.size(), lineno);
        const long ti = parts[1].empty() ? -1 : detail::parse_index(parts[1], tex.size(), lineno);
        const long ni = parts[2].empty() ? -1 : detail::parse_index(parts[2], nrm.size(), lineno);
        if (ni < 0) missing_normals = true;
        const auto key = std::make_tuple(vi, ti, ni);
        auto [it, inserted] = remap.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
        if (inserted) {
          mesh.vertices.push_back(pos[vi]);
          mesh.uvs.push_back(ti >= 0 ? tex[ti] : Vec2::Zero());
          mesh.normals.push_back(ni >= 0 ? Vec3(nrm[ni].normalized()) : Vec3::UnitZ());
        }
        corner.push_back(it->second);
      }
      for (std::size_t k = 1; k + 1 < corner.size(); ++k)
        mesh.triangles.push_back({corner[0], corner[k], corner[k + 1]});
    }
  }
  if (mesh.triangles.empty()) throw ParseError("obj: no faces");
  if (missing_normals) compute_smooth_normals(mesh);
  return mesh;
}

/// Reads `{base_color, roughness, metallic, k_d, k_s, textures?}`; texture paths are
/// relative to `dir`.
inline Material parse_material(const nlohmann::json& j, const std::filesystem::path& dir) {
  Material m;
  try {
    if (j.contains("base_color")) {
      const auto& c = j.at("base_color");
      m.base_color = Rgb(c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>());
    }
    m.roughness = j.value("roughness", m.roughness);
    m.metallic = j.value("metallic", m.metallic);
    m.k_d = j.value("k_d", m.k_d);
    m.k_s = j.value("k_s", m.k_s);
    if (j.contains("textures")) {
      const auto& t = j.at("textures");
      auto load = [&](const char* key, bool srgb) -> std::shared_ptr<const Texture> {
        if (!t.contains(key)) return nullptr;
        const auto path = dir / t.at(key).get<std::string>();
        if (!std::filesystem::exists(path)) throw AssetError("texture not found: " + path.string());
        return std::make_shared<Texture>(read_png(path), srgb);
      };
      m.base_color_map = load("base_color", true);
      m.roughness_map = load("roughness", false);
      m.metallic_map = load("metallic", false);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("material: ") + e.what());
  }
  return m;
}

// ---- library ---------------------------------------------------------------

/// Builds a named built-in asset, or returns nullptr when `ref` is not built in.
/// Keys: cube, box:LxWxH, wall:LxWxH, sphere:R:SLICES, pedestrian, car, traffic_light.
inline std::shared_ptr<const Mesh> make_builtin_asset(const std::string& ref) {
  auto dims = [&](std::string_view spec) {
    std::array<double, 3> d{};
    std::string s(spec);
    for (auto& ch : s)
      if (ch == 'x' || ch == ':') ch = ' ';
    std::istringstream ss(s);
    for (auto& v : d)
      if (!(ss >> v) || v <= 0) throw AssetError("bad built-in asset dimensions: " + ref);
    return d;
  };
  Mesh m;
  if (ref == "cube") {
    m = make_box(1, 1, 1);
    m.material.base_color = Rgb(0.7, 0.15, 0.1);
    m.material.roughness = 0.6;
  } else if (ref.starts_with("box:") || ref.starts_with("wall:")) {
    const auto d = dims(ref.substr(ref.find(':') + 1));
    m = make_box(d[0], d[1], d[2]);
    if (ref.starts_with("wall:")) {
      m.material.base_color = Rgb(0.55, 0.52, 0.48);
      m.material.roughness = 0.9;
    } else {
      m.material.base_color = Rgb(0.8, 0.45, 0.1);
      m.material.roughness = 0.7;
    }
  } else if (ref.starts_with("sphere:")) {
    std::istringstream ss(ref.substr(7));
    double r = 0;
    int slices = 0;
    char sep = 0;
    if (!(ss >> r >> sep >> slices) || r <= 0 || slices < 3) throw AssetError("bad sphere asset: " + ref);
    m = make_sphere(r, slices, slices);
    m.material.base_color = Rgb(0.2, 0.35, 0.8);
    m.material.roughness = 0.35;
  } else if (ref == "pedestrian") {
    m = make_cylinder(0.2, 1.45, 16);
    Mesh head = make_sphere(0.12, 12, 8);
    m.append(head, Vec3(0, 0, 1.47));
    m.material.base_color = Rgb(0.15, 0.25, 0.6);
    m.material.roughness = 0.8;
  } else if (ref == "car") {
    m = make_box(4.2, 1.8, 1.0);
    m.append(make_box(2.2, 1.6, 0.55), Vec3(-0.3, 0, 1.0));
    m.material.base_color = Rgb(0.75, 0.75, 0.78);
    m.material.metallic = 0.8;
    m.material.roughness = 0.35;
  } else if (ref == "traffic_light") {
    m = make_cylinder(0.08, 3.0, 12);
    m.append(make_box(0.35, 0.35, 0.9), Vec3(0, 0, 3.0));
    m.material.base_color = Rgb(0.1, 0.1, 0.1);
  } else {
    return nullptr;
  }
  return std::make_shared<const Mesh>(std::move(m));
}

/// Resolves asset keys to meshes. Keys are either built-in names or OBJ paths
/// relative to the asset root; `foo.obj` takes its material from `foo.material.json`.
class AssetLibrary {
 public:
  explicit AssetLibrary(std::filesystem::path root = default_root()) : root_(std::move(root)) {}

  static std::filesystem::path default_root() {
    const char* env = std::getenv("SOW_ASSET_PATH");
    return env ? std::filesystem::path(env) : std::filesystem::path("assets");
  }

  const std::filesystem::path& root() const { return root_; }

  std::shared_ptr<const Mesh> get(const std::string& ref) const {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(ref); it != cache_.end()) return it->second;
    auto mesh = make_builtin_asset(ref);
    if (!mesh) mesh = load_file(ref);
    cache_.emplace(ref, mesh);
    return mesh;
  }

  bool resolvable(const std::string& ref) const {
    try {
      get(ref);
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  /// Registers an in-memory mesh under `ref` (tests, procedural content).
  void put(const std::string& ref, Mesh mesh) {
    std::lock_guard lock(mutex_);
    cache_[ref] = std::make_shared<const Mesh>(std::move(mesh));
  }

 private:
  std::shared_ptr<const Mesh> load_file(const std::string& ref) const {
    const auto path = root_ / ref;
    if (!std::filesystem::exists(path)) throw AssetError("unresolved asset reference: " + ref);
    Mesh mesh = parse_obj(read_text_file(path));
    auto sidecar = path;
    sidecar.replace_extension(".material.json");
    if (std::filesystem::exists(sidecar)) {
      try {
        mesh.material = parse_material(nlohmann::json::parse(read_text_file(sidecar)), sidecar.parent_path());
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(sidecar.string() + ": " + e.what());
      }
    }
    mesh.validate();
    return std::make_shared<const Mesh>(std::move(mesh));
  }

  std::filesystem::path root_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const Mesh>> cache_;
};

}  // namespace mrsim
