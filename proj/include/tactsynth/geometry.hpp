#pragma once

// CAD mesh ingestion and the pose/modality vocabulary shared by the whole
// pipeline. Meshes are triangle soup in millimetres; no vertex welding is
// performed because the rasterizer consumes triangles directly.

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tactsynth/common.hpp"

namespace tactsynth {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& a) {
  return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z);
}

struct Aabb {
  Vec3 lo{std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity()};
  Vec3 hi{-std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity(),
          -std::numeric_limits<double>::infinity()};

  void expand(const Vec3& p) {
    lo.x = std::min(lo.x, p.x);
    lo.y = std::min(lo.y, p.y);
    lo.z = std::min(lo.z, p.z);
    hi.x = std::max(hi.x, p.x);
    hi.y = std::max(hi.y, p.y);
    hi.z = std::max(hi.z, p.z);
  }
  Vec3 extent() const { return hi - lo; }
};

// Triangle soup with per-triangle unit normals. The mesh +Z axis is the
// sensor's outward z; immutable after construction.
struct TriangleMesh {
  std::vector<Vec3> vertices;                    // millimetres
  std::vector<std::array<uint32_t, 3>> triangles;
  std::vector<Vec3> normals;                     // unit, per triangle
  size_t degenerate_dropped = 0;

  Aabb bounding_box() const {
    Aabb box;
    for (const auto& v : vertices) box.expand(v);
    return box;
  }
};

namespace detail {

constexpr double kDegenerateArea = 1e-12;  // mm^2

// Appends one facet, dropping zero-area triangles and recomputing the normal.
inline void push_facet(TriangleMesh& mesh, const Vec3& a, const Vec3& b,
                       const Vec3& c) {
  for (const Vec3* p : {&a, &b, &c})
    if (!std::isfinite(p->x) || !std::isfinite(p->y) || !std::isfinite(p->z))
      fail(ErrorCode::MalformedAscii, "non-finite vertex coordinate");
  const Vec3 n = cross(b - a, c - a);
  const double len = norm(n);
  if (0.5 * len < kDegenerateArea) {
    ++mesh.degenerate_dropped;
    return;
  }
  const uint32_t base = static_cast<uint32_t>(mesh.vertices.size());
  mesh.vertices.push_back(a);
  mesh.vertices.push_back(b);
  mesh.vertices.push_back(c);
  mesh.triangles.push_back({base, base + 1, base + 2});
  mesh.normals.push_back(n * (1.0 / len));
}

inline float read_f32le(const uint8_t* p) {
  uint32_t u = uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
               (uint32_t(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline TriangleMesh parse_stl_binary(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 84)
    fail(ErrorCode::TruncatedStl, "binary STL shorter than 84-byte header");
  const uint32_t count = uint32_t(bytes[80]) | (uint32_t(bytes[81]) << 8) |
                         (uint32_t(bytes[82]) << 16) |
                         (uint32_t(bytes[83]) << 24);
  const size_t expected = 84 + 50ull * count;
  if (bytes.size() != expected)
    fail(ErrorCode::TruncatedStl,
         "binary STL length " + std::to_string(bytes.size()) +
             " does not match declared facet count " + std::to_string(count) +
             " (expected " + std::to_string(expected) + ")");
  TriangleMesh mesh;
  mesh.vertices.reserve(count * 3);
  mesh.triangles.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint8_t* f = bytes.data() + 84 + 50ull * i;
    // 12 floats: normal (ignored, recomputed), then three vertices.
    Vec3 v[3];
    for (int k = 0; k < 3; ++k)
      v[k] = {read_f32le(f + 12 + 12 * k), read_f32le(f + 16 + 12 * k),
              read_f32le(f + 20 + 12 * k)};
    push_facet(mesh, v[0], v[1], v[2]);
  }
  if (mesh.triangles.empty())
    fail(ErrorCode::EmptyMesh, "no non-degenerate triangles in binary STL");
  return mesh;
}

inline TriangleMesh parse_stl_ascii(const std::vector<uint8_t>& bytes) {
  const std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  TriangleMesh mesh;
  std::vector<Vec3> verts;
  auto malformed = [&](const std::string& what) {
    fail(ErrorCode::MalformedAscii,
         what + " at line " + std::to_string(line_no));
  };
  bool saw_solid = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    if (tok == "solid") {
      saw_solid = true;
    } else if (tok == "facet" || tok == "outer" || tok == "endloop" ||
               tok == "endsolid") {
      // facet normals are recomputed; loop structure enforced via vertex count
    } else if (tok == "vertex") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) malformed("unparsable vertex");
      verts.push_back(v);
    } else if (tok == "endfacet") {
      if (verts.size() != 3) malformed("facet without exactly 3 vertices");
      push_facet(mesh, verts[0], verts[1], verts[2]);
      verts.clear();
    } else {
      malformed("unexpected token '" + tok + "'");
    }
  }
  if (!saw_solid) fail(ErrorCode::MalformedAscii, "missing 'solid' keyword");
  if (!verts.empty()) fail(ErrorCode::MalformedAscii, "unterminated facet");
  if (mesh.triangles.empty())
    fail(ErrorCode::EmptyMesh, "no non-degenerate triangles in ASCII STL");
  return mesh;
}

}  // namespace detail

// Auto-detects the encoding: ASCII iff the buffer begins with "solid" and
// parses as ASCII; anything else is treated as binary. A "solid"-prefixed
// buffer that fails both ways reports the ASCII diagnosis, which carries the
// line number.
inline TriangleMesh parse_stl(const std::vector<uint8_t>& bytes) {
  bool starts_solid = bytes.size() >= 5 &&
                      std::memcmp(bytes.data(), "solid", 5) == 0;
  if (!starts_solid) return detail::parse_stl_binary(bytes);
  try {
    return detail::parse_stl_ascii(bytes);
  } catch (const Error& ascii_err) {
    if (ascii_err.code() == ErrorCode::EmptyMesh) throw;
    try {
      return detail::parse_stl_binary(bytes);
    } catch (const Error&) {
      throw ascii_err;
    }
  }
}

inline void append_f32le(std::vector<uint8_t>& out, float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  out.push_back(static_cast<uint8_t>(u));
  out.push_back(static_cast<uint8_t>(u >> 8));
  out.push_back(static_cast<uint8_t>(u >> 16));
  out.push_back(static_cast<uint8_t>(u >> 24));
}

inline std::vector<uint8_t> write_stl_binary(const TriangleMesh& mesh) {
  std::vector<uint8_t> out(80, 0);
  const char* tag = "tactsynth binary stl";
  std::memcpy(out.data(), tag, std::strlen(tag));
  const uint32_t n = static_cast<uint32_t>(mesh.triangles.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(n >> (8 * i)));
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3& nrm = mesh.normals[t];
    append_f32le(out, static_cast<float>(nrm.x));
    append_f32le(out, static_cast<float>(nrm.y));
    append_f32le(out, static_cast<float>(nrm.z));
    for (uint32_t idx : mesh.triangles[t]) {
      const Vec3& v = mesh.vertices[idx];
      append_f32le(out, static_cast<float>(v.x));
      append_f32le(out, static_cast<float>(v.y));
      append_f32le(out, static_cast<float>(v.z));
    }
    out.push_back(0);
    out.push_back(0);
  }
  return out;
}

inline std::string write_stl_ascii(const TriangleMesh& mesh,
                                   const std::string& name = "mesh") {
  std::ostringstream out;
  out.precision(9);
  out << "solid " << name << "\n";
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    const Vec3& n = mesh.normals[t];
    out << "  facet normal " << n.x << " " << n.y << " " << n.z << "\n";
    out << "    outer loop\n";
    for (uint32_t idx : mesh.triangles[t]) {
      const Vec3& v = mesh.vertices[idx];
      out << "      vertex " << v.x << " " << v.y << " " << v.z << "\n";
    }
    out << "    endloop\n  endfacet\n";
  }
  out << "endsolid " << name << "\n";
  return out.str();
}

// 4-DoF contact pose in the sensor-centred frame, z outward from the skin.
struct ContactPose {
  double x = 0.0;    // mm, [-5, 5]
  double y = 0.0;    // mm, [-5, 5]
  double z = 0.0;    // mm, [-1, 1], positive = deeper indentation
  double yaw = 0.0;  // degrees, [-90, 90]
};

struct PoseRange {
  double xy = 5.0;
  double z = 1.0;
  double yaw = 90.0;
};

enum class ValidationMode { Strict, Permissive };

struct PoseValidation {
  ContactPose pose;
  std::array<bool, 4> clamped = {false, false, false, false};  // x,y,z,yaw

  bool any_clamped() const {
    return clamped[0] || clamped[1] || clamped[2] || clamped[3];
  }
};

inline PoseValidation validate_pose(const ContactPose& p, ValidationMode mode,
                                    const PoseRange& range = {}) {
  PoseValidation out;
  out.pose = p;
  const struct {
    const char* name;
    double* value;
    double lo, hi;
    int slot;
  } comps[4] = {{"x", &out.pose.x, -range.xy, range.xy, 0},
                {"y", &out.pose.y, -range.xy, range.xy, 1},
                {"z", &out.pose.z, -range.z, range.z, 2},
                {"yaw", &out.pose.yaw, -range.yaw, range.yaw, 3}};
  for (const auto& c : comps) {
    if (*c.value < c.lo || *c.value > c.hi || !std::isfinite(*c.value)) {
      if (mode == ValidationMode::Strict)
        fail(ErrorCode::PoseOutOfRange,
             std::string("pose component ") + c.name + " = " +
                 std::to_string(*c.value) + " outside [" +
                 std::to_string(c.lo) + ", " + std::to_string(c.hi) + "]");
      *c.value = std::clamp(*c.value, c.lo, c.hi);
      out.clamped[c.slot] = true;
    }
  }
  return out;
}

enum class SensorModality { TacTip, ViTac, ViTacTip };

constexpr std::array<SensorModality, 3> kAllModalities = {
    SensorModality::TacTip, SensorModality::ViTac, SensorModality::ViTacTip};

inline const char* modality_name(SensorModality m) {
  switch (m) {
    case SensorModality::TacTip: return "TacTip";
    case SensorModality::ViTac: return "ViTac";
    case SensorModality::ViTacTip: return "ViTacTip";
  }
  return "?";
}

inline SensorModality modality_from_name(const std::string& name) {
  for (SensorModality m : kAllModalities)
    if (name == modality_name(m)) return m;
  fail(ErrorCode::ModalityNotFound, "unknown sensor modality '" + name + "'");
}

}  // namespace tactsynth
