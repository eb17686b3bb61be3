#pragma once

// Software orthographic z-buffer rasterizer. The camera looks along -z from
// above the mesh; world (0,0) projects to the principal point. Depth values
// are remapped so the far plane (skin rest level) is 0 and the near plane
// (deepest indentation) is 1; pixels with no hit inside the contact span are
// exactly 0 so masking stays lossless.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tactsynth/common.hpp"
#include "tactsynth/geometry.hpp"
#include "tactsynth/image.hpp"

namespace tactsynth {

struct OrthoCamera {
  double mm_per_pixel = 0.12;
  double near_mm = 1.0;   // world z mapped to intensity 1
  double far_mm = -1.0;   // world z mapped to intensity 0
  double cx = 256.0;      // principal point, pixel coords
  double cy = 256.0;
  int width = 512;
  int height = 512;
};

struct DepthMap {
  ImageF img;
  double mm_per_pixel = 0.12;
  double depth_range_mm = 2.0;
  bool any_hit = false;

  int width() const { return img.width; }
  int height() const { return img.height; }
};

struct ObjectMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> v;

  ObjectMask() = default;
  ObjectMask(int w, int h) : width(w), height(h), v(size_t(w) * h, 0) {}
  uint8_t at(int x, int y) const { return v[size_t(y) * width + x]; }
  uint8_t& at(int x, int y) { return v[size_t(y) * width + x]; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t p : v) n += p ? 1 : 0;
    return n;
  }
};

namespace detail {

// Vertex positions snap to a 1/256 px grid and edge functions run in int64,
// so inside tests, ties and the top-left rule are exact: abutting triangles
// are watertight and results are bit-deterministic.
constexpr int kSubPixelBits = 8;
constexpr int64_t kSubPixelScale = 1 << kSubPixelBits;

struct Vec2i {
  int64_t x, y;
};

inline int64_t orient2d(const Vec2i& a, const Vec2i& b, const Vec2i& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline bool is_top_left(const Vec2i& a, const Vec2i& b) {
  return (a.y == b.y && b.x < a.x) || (b.y < a.y);
}

}  // namespace detail

// Rasterizes per-triangle with edge-function inside tests and a top-left
// fill rule. The z-buffer keeps the hit nearest the camera (max world z);
// exact ties resolve to the lowest triangle index, so the result does not
// depend on traversal order.
inline DepthMap render_depth(const TriangleMesh& mesh,
                             const OrthoCamera& cam) {
  if (mesh.triangles.empty()) fail(ErrorCode::EmptyMesh, "cannot render");
  if (!(cam.near_mm > cam.far_mm))
    fail(ErrorCode::BadConfig, "camera requires near_mm > far_mm");
  if (cam.mm_per_pixel <= 0.0)
    fail(ErrorCode::BadConfig, "mm_per_pixel must be positive");

  DepthMap out;
  out.img = ImageF(cam.width, cam.height, 0.0f);
  out.mm_per_pixel = cam.mm_per_pixel;
  out.depth_range_mm = cam.near_mm - cam.far_mm;

  const size_t npx = out.img.size();
  std::vector<double> zbuf(npx, -std::numeric_limits<double>::infinity());
  std::vector<uint32_t> owner(npx, UINT32_MAX);

  const double inv_mmpp = 1.0 / cam.mm_per_pixel;
  const double snap = static_cast<double>(detail::kSubPixelScale);
  for (uint32_t t = 0; t < mesh.triangles.size(); ++t) {
    detail::Vec2i p[3];
    double z[3];
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = mesh.vertices[mesh.triangles[t][k]];
      p[k] = {static_cast<int64_t>(
                  std::llround((v.x * inv_mmpp + cam.cx) * snap)),
              static_cast<int64_t>(
                  std::llround((v.y * inv_mmpp + cam.cy) * snap))};
      z[k] = v.z;
    }
    int64_t area2 = detail::orient2d(p[0], p[1], p[2]);
    if (area2 == 0) continue;
    if (area2 < 0) {
      std::swap(p[1], p[2]);
      std::swap(z[1], z[2]);
      area2 = -area2;
    }
    const int64_t min_x = std::min({p[0].x, p[1].x, p[2].x});
    const int64_t max_x = std::max({p[0].x, p[1].x, p[2].x});
    const int64_t min_y = std::min({p[0].y, p[1].y, p[2].y});
    const int64_t max_y = std::max({p[0].y, p[1].y, p[2].y});
    // first/last pixel whose centre (i*S + S/2) can fall inside
    const int x0 = std::max<int64_t>(0, (min_x - detail::kSubPixelScale / 2) >>
                                            detail::kSubPixelBits);
    const int x1 = std::min<int64_t>(cam.width - 1,
                                     (max_x >> detail::kSubPixelBits) + 1);
    const int y0 = std::max<int64_t>(0, (min_y - detail::kSubPixelScale / 2) >>
                                            detail::kSubPixelBits);
    const int y1 = std::min<int64_t>(cam.height - 1,
                                     (max_y >> detail::kSubPixelBits) + 1);
    if (x0 > x1 || y0 > y1) continue;

    const bool tl0 = detail::is_top_left(p[1], p[2]);
    const bool tl1 = detail::is_top_left(p[2], p[0]);
    const bool tl2 = detail::is_top_left(p[0], p[1]);
    const double inv_area = 1.0 / static_cast<double>(area2);

    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const detail::Vec2i s{
            x * detail::kSubPixelScale + detail::kSubPixelScale / 2,
            y * detail::kSubPixelScale + detail::kSubPixelScale / 2};
        const int64_t w0 = detail::orient2d(p[1], p[2], s);
        const int64_t w1 = detail::orient2d(p[2], p[0], s);
        const int64_t w2 = detail::orient2d(p[0], p[1], s);
        const bool inside = (w0 > 0 || (w0 == 0 && tl0)) &&
                            (w1 > 0 || (w1 == 0 && tl1)) &&
                            (w2 > 0 || (w2 == 0 && tl2));
        if (!inside) continue;
        const double zs = (static_cast<double>(w0) * z[0] +
                           static_cast<double>(w1) * z[1] +
                           static_cast<double>(w2) * z[2]) *
                          inv_area;
        const size_t i = size_t(y) * cam.width + x;
        if (zs > zbuf[i] || (zs == zbuf[i] && t < owner[i])) {
          zbuf[i] = zs;
          owner[i] = t;
        }
      }
    }
  }

  const double inv_range = 1.0 / out.depth_range_mm;
  for (size_t i = 0; i < npx; ++i) {
    if (owner[i] == UINT32_MAX) continue;
    const double d = (zbuf[i] - cam.far_mm) * inv_range;
    const float val = static_cast<float>(std::clamp(d, 0.0, 1.0));
    out.img.v[i] = val;
    if (val > 0.0f) out.any_hit = true;
  }
  return out;
}

namespace detail {

inline ObjectMask erode3x3(const ObjectMask& m) {
  ObjectMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      uint8_t keep = 1;
      for (int dy = -1; dy <= 1 && keep; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height ||
              !m.at(nx, ny)) {
            keep = 0;
            break;
          }
        }
      }
      out.at(x, y) = keep;
    }
  }
  return out;
}

inline ObjectMask dilate3x3(const ObjectMask& m) {
  ObjectMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      uint8_t hit = 0;
      for (int dy = -1; dy <= 1 && !hit; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < m.width && ny < m.height &&
              m.at(nx, ny)) {
            hit = 1;
            break;
          }
        }
      }
      out.at(x, y) = hit;
    }
  }
  return out;
}

}  // namespace detail

// Threshold followed by one 3x3 morphological open to drop isolated
// speckles. Erosion at the image border treats outside as empty, so a
// full-frame mask survives the open unchanged.
inline ObjectMask extract_mask(const ImageF& img, float threshold) {
  ObjectMask raw(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      raw.at(x, y) = img.at(x, y) > threshold ? 1 : 0;
  return detail::dilate3x3(detail::erode3x3(raw));
}

inline ObjectMask extract_mask(const DepthMap& d, float threshold) {
  return extract_mask(d.img, threshold);
}

struct Centroid {
  double x = 0.0;
  double y = 0.0;
};

// Arithmetic mean of occupied pixel indices, x = column, y = row.
inline Centroid mask_centroid(const ObjectMask& mask) {
  double sx = 0.0, sy = 0.0;
  size_t n = 0;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) {
        sx += x;
        sy += y;
        ++n;
      }
    }
  }
  if (n == 0) fail(ErrorCode::EmptyMask, "centroid of empty mask");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

}  // namespace tactsynth
