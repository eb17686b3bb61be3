#pragma once

// Procedural contact-object meshes. The corpus mirrors a 5-seen / 3-novel
// protocol: the first five shapes train, the last three are held out. All
// shapes are millimetre-scale, centred on the z axis, with their contact
// surface spanning z in (0, ~1.8] so a camera slab [0, 2] mm captures them.

#include <cmath>
#include <string>
#include <vector>

#include "tactsynth/common.hpp"
#include "tactsynth/geometry.hpp"

namespace tactsynth {
namespace shapes {

constexpr double kTau = 6.283185307179586476925286766559;

namespace detail {

inline void add_tri(TriangleMesh& mesh, const Vec3& a, const Vec3& b,
                    const Vec3& c) {
  const Vec3 n = cross(b - a, c - a);
  const double len = norm(n);
  if (0.5 * len < 1e-12) return;
  const uint32_t base = static_cast<uint32_t>(mesh.vertices.size());
  mesh.vertices.push_back(a);
  mesh.vertices.push_back(b);
  mesh.vertices.push_back(c);
  mesh.triangles.push_back({base, base + 1, base + 2});
  mesh.normals.push_back(n * (1.0 / len));
}

struct Pt {
  double x, y;
};

// Extrudes a polygon star-shaped about `hub`. Caps are fans from the hub,
// walls are quads; winding gives outward normals.
inline TriangleMesh extrude(const std::vector<Pt>& poly, const Pt& hub,
                            double z_top, double z_bottom) {
  TriangleMesh mesh;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Pt& a = poly[i];
    const Pt& b = poly[(i + 1) % n];
    add_tri(mesh, {hub.x, hub.y, z_top}, {a.x, a.y, z_top}, {b.x, b.y, z_top});
    add_tri(mesh, {hub.x, hub.y, z_bottom}, {b.x, b.y, z_bottom},
            {a.x, a.y, z_bottom});
    add_tri(mesh, {a.x, a.y, z_bottom}, {b.x, b.y, z_bottom},
            {b.x, b.y, z_top});
    add_tri(mesh, {a.x, a.y, z_bottom}, {b.x, b.y, z_top}, {a.x, a.y, z_top});
  }
  return mesh;
}

}  // namespace detail

// Axis-aligned box centred at the origin in x/y, top at z_top, 12 triangles.
inline TriangleMesh make_box(double sx, double sy, double sz,
                             double z_top = 0.0) {
  const double x = sx / 2, y = sy / 2;
  const double zt = z_top, zb = z_top - sz;
  TriangleMesh m;
  using detail::add_tri;
  // top / bottom
  add_tri(m, {-x, -y, zt}, {x, -y, zt}, {x, y, zt});
  add_tri(m, {-x, -y, zt}, {x, y, zt}, {-x, y, zt});
  add_tri(m, {-x, -y, zb}, {x, y, zb}, {x, -y, zb});
  add_tri(m, {-x, -y, zb}, {-x, y, zb}, {x, y, zb});
  // sides
  add_tri(m, {-x, -y, zb}, {x, -y, zb}, {x, -y, zt});
  add_tri(m, {-x, -y, zb}, {x, -y, zt}, {-x, -y, zt});
  add_tri(m, {x, -y, zb}, {x, y, zb}, {x, y, zt});
  add_tri(m, {x, -y, zb}, {x, y, zt}, {x, -y, zt});
  add_tri(m, {x, y, zb}, {-x, y, zb}, {-x, y, zt});
  add_tri(m, {x, y, zb}, {-x, y, zt}, {x, y, zt});
  add_tri(m, {-x, y, zb}, {-x, -y, zb}, {-x, -y, zt});
  add_tri(m, {-x, y, zb}, {-x, -y, zt}, {-x, y, zt});
  return m;
}

inline TriangleMesh make_straight_edge() { return make_box(36, 5, 3, 1.2); }

inline TriangleMesh make_cuboid() { return make_box(20, 20, 3, 1.2); }

inline TriangleMesh make_sphere(double radius = 16.0, double z_top = 1.9,
                                int slices = 64, int stacks = 32) {
  TriangleMesh mesh;
  const double cz = z_top - radius;
  auto at = [&](int st, int sl) -> Vec3 {
    const double phi = kTau / 2 * st / stacks;  // 0 at top pole
    const double theta = kTau * sl / slices;
    return {radius * std::sin(phi) * std::cos(theta),
            radius * std::sin(phi) * std::sin(theta),
            cz + radius * std::cos(phi)};
  };
  for (int st = 0; st < stacks; ++st) {
    for (int sl = 0; sl < slices; ++sl) {
      const Vec3 a = at(st, sl), b = at(st + 1, sl), c = at(st + 1, sl + 1),
                 d = at(st, sl + 1);
      detail::add_tri(mesh, a, b, c);
      detail::add_tri(mesh, a, c, d);
    }
  }
  return mesh;
}

// Three-quarter disc (quarter notch) extrusion; the fan hub sits at the
// disc centre, which is a boundary corner, so the footprint area is exactly
// the 3/4 sector.
inline TriangleMesh make_pacman(double radius = 14.0, int segments = 96) {
  std::vector<detail::Pt> poly;
  poly.push_back({0, 0});
  const int arc = segments * 3 / 4;
  for (int i = 0; i <= arc; ++i) {
    const double a = kTau * 0.75 * i / arc;
    poly.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return detail::extrude(poly, {0, 0}, 1.2, -1.8);
}

inline TriangleMesh make_hollow_cylinder(double outer = 14.0, double inner = 8.0,
                                         int segments = 96) {
  TriangleMesh mesh;
  const double zt = 1.2, zb = -1.8;
  auto ring = [&](double r, double z, int i) -> Vec3 {
    const double a = kTau * i / segments;
    return {r * std::cos(a), r * std::sin(a), z};
  };
  for (int i = 0; i < segments; ++i) {
    const Vec3 ot0 = ring(outer, zt, i), ot1 = ring(outer, zt, i + 1);
    const Vec3 it0 = ring(inner, zt, i), it1 = ring(inner, zt, i + 1);
    const Vec3 ob0 = ring(outer, zb, i), ob1 = ring(outer, zb, i + 1);
    const Vec3 ib0 = ring(inner, zb, i), ib1 = ring(inner, zb, i + 1);
    // annulus caps
    detail::add_tri(mesh, it0, ot0, ot1);
    detail::add_tri(mesh, it0, ot1, it1);
    detail::add_tri(mesh, ib0, ob1, ob0);
    detail::add_tri(mesh, ib0, ib1, ob1);
    // outer and inner walls
    detail::add_tri(mesh, ob0, ob1, ot1);
    detail::add_tri(mesh, ob0, ot1, ot0);
    detail::add_tri(mesh, ib0, it1, ib1);
    detail::add_tri(mesh, ib0, it0, it1);
  }
  return mesh;
}

inline TriangleMesh make_hex_prism(double circumradius = 12.0) {
  std::vector<detail::Pt> poly;
  for (int i = 0; i < 6; ++i) {
    const double a = kTau * i / 6;
    poly.push_back({circumradius * std::cos(a), circumradius * std::sin(a)});
  }
  return detail::extrude(poly, {0, 0}, 1.2, -1.8);
}

inline TriangleMesh make_cross_prism(double arm_width = 8.0,
                                     double length = 30.0) {
  const double w = arm_width / 2, l = length / 2;
  std::vector<detail::Pt> poly = {{l, -w},  {l, w},   {w, w},   {w, l},
                                  {-w, l},  {-w, w},  {-l, w},  {-l, -w},
                                  {-w, -w}, {-w, -l}, {w, -l},  {w, -w}};
  return detail::extrude(poly, {0, 0}, 1.2, -1.8);
}

// Triangular ramp: the top surface slopes from z=0.2 to z=1.6 across x, so
// depth maps get a smooth gradient unlike the flat-top prisms.
inline TriangleMesh make_wedge(double sx = 24.0, double sy = 16.0) {
  TriangleMesh mesh;
  const double x = sx / 2, y = sy / 2;
  const double z_lo = 0.2, z_hi = 1.6, zb = -1.8;
  using detail::add_tri;
  const Vec3 t0{-x, -y, z_lo}, t1{x, -y, z_hi}, t2{x, y, z_hi}, t3{-x, y, z_lo};
  const Vec3 b0{-x, -y, zb}, b1{x, -y, zb}, b2{x, y, zb}, b3{-x, y, zb};
  add_tri(mesh, t0, t1, t2);
  add_tri(mesh, t0, t2, t3);
  add_tri(mesh, b0, b2, b1);
  add_tri(mesh, b0, b3, b2);
  add_tri(mesh, b0, b1, t1);
  add_tri(mesh, b0, t1, t0);
  add_tri(mesh, b1, b2, t2);
  add_tri(mesh, b1, t2, t1);
  add_tri(mesh, b2, b3, t3);
  add_tri(mesh, b2, t3, t2);
  add_tri(mesh, b3, b0, t0);
  add_tri(mesh, b3, t0, t3);
  return mesh;
}

inline const std::vector<std::string>& seen_objects() {
  static const std::vector<std::string> names = {
      "straight_edge", "cuboid", "sphere", "pacman", "hollow_cylinder"};
  return names;
}

inline const std::vector<std::string>& novel_objects() {
  static const std::vector<std::string> names = {"hex_prism", "cross_prism",
                                                 "wedge"};
  return names;
}

inline std::vector<std::string> all_objects() {
  std::vector<std::string> names = seen_objects();
  const auto& novel = novel_objects();
  names.insert(names.end(), novel.begin(), novel.end());
  return names;
}

inline TriangleMesh make_shape(const std::string& name) {
  if (name == "straight_edge") return make_straight_edge();
  if (name == "cuboid") return make_cuboid();
  if (name == "sphere") return make_sphere();
  if (name == "pacman") return make_pacman();
  if (name == "hollow_cylinder") return make_hollow_cylinder();
  if (name == "hex_prism") return make_hex_prism();
  if (name == "cross_prism") return make_cross_prism();
  if (name == "wedge") return make_wedge();
  fail(ErrorCode::BadConfig, "unknown shape '" + name + "'");
}

}  // namespace shapes
}  // namespace tactsynth
