#pragma once

// Float image containers. Grayscale images are single-channel row-major;
// color images are interleaved RGB. Values live in [0,1] by convention.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "tactsynth/common.hpp"

namespace tactsynth {

struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> v;  // row-major, height*width

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.0f)
      : width(w), height(h), v(static_cast<size_t>(w) * h, fill) {}

  float& at(int x, int y) { return v[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return v[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
};

struct ImageRGB {
  int width = 0;
  int height = 0;
  std::vector<float> v;  // row-major, interleaved r,g,b

  ImageRGB() = default;
  ImageRGB(int w, int h, float fill = 0.0f)
      : width(w), height(h), v(static_cast<size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) {
    return v[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  float at(int x, int y, int c) const {
    return v[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
};

inline float luma(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

inline ImageF to_luma(const ImageRGB& img) {
  ImageF out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = luma(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  return out;
}

inline ImageRGB to_rgb(const ImageF& img) {
  ImageRGB out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y);
  return out;
}

// Area-average downsample by an integer factor. Used to bring control images
// to latent resolution and to build the training-size corpus.
inline ImageF downsample_area(const ImageF& img, int factor) {
  if (factor <= 0 || img.width % factor != 0 || img.height % factor != 0)
    fail(ErrorCode::DimensionMismatch,
         "downsample factor must evenly divide image dimensions");
  const int w = img.width / factor;
  const int h = img.height / factor;
  ImageF out(w, h);
  const float inv = 1.0f / (factor * factor);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          acc += img.at(x * factor + dx, y * factor + dy);
      out.at(x, y) = acc * inv;
    }
  }
  return out;
}

inline ImageF downsample_to(const ImageF& img, int target) {
  if (img.width == target && img.height == target) return img;
  if (img.width % target != 0)
    fail(ErrorCode::DimensionMismatch, "resolution not divisible by target");
  return downsample_area(img, img.width / target);
}

}  // namespace tactsynth
