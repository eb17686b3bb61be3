#pragma once

// Minimal CHW tensor and a flat parameter store. All learnable parameters of
// a network live in one contiguous vector with a named registry; layers keep
// offsets into it. Gradients are a parallel vector, which makes the
// optimizer, checkpointing, finite-difference checks and deterministic
// multi-thread reduction trivial.

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "tactsynth/common.hpp"
#include "tactsynth/image.hpp"

namespace tactsynth {

template <typename T>
struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_, T fill = T(0))
      : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

  size_t size() const { return v.size(); }
  T* plane(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
  const T* plane(int ci) const {
    return v.data() + static_cast<size_t>(ci) * h * w;
  }
  T& at(int ci, int y, int x) {
    return v[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  T at(int ci, int y, int x) const {
    return v[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  bool same_shape(const Tensor3& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
  void resize_like(int c_, int h_, int w_) {
    c = c_;
    h = h_;
    w = w_;
    v.assign(static_cast<size_t>(c_) * h_ * w_, T(0));
  }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

template <typename T>
inline void require_same_shape(const Tensor3<T>& a, const Tensor3<T>& b,
                               const char* where) {
  if (!a.same_shape(b))
    fail(ErrorCode::ShapeMismatch, std::string(where) + ": tensors disagree");
}

// Interleaved RGB image <-> planar tensor in [0,1].
template <typename T>
inline Tensor3<T> tensor_from_rgb(const ImageRGB& img) {
  Tensor3<T> t(3, img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(c, y, x) = static_cast<T>(img.at(x, y, c));
  return t;
}

template <typename T>
inline ImageRGB rgb_from_tensor(const Tensor3<T>& t, bool clip = true) {
  if (t.c != 3) fail(ErrorCode::ShapeMismatch, "expected 3-channel tensor");
  ImageRGB img(t.w, t.h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) {
        float v = static_cast<float>(t.at(c, y, x));
        if (clip) v = std::clamp(v, 0.0f, 1.0f);
        img.at(x, y, c) = v;
      }
  return img;
}

template <typename T>
inline Tensor3<T> tensor_from_gray(const ImageF& img) {
  Tensor3<T> t(1, img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      t.at(0, y, x) = static_cast<T>(img.at(x, y));
  return t;
}

template <typename T>
struct ParamStore {
  std::vector<T> data;
  std::vector<T> grad;

  struct Entry {
    std::string name;
    size_t offset;
    std::vector<int> shape;

    size_t count() const {
      size_t n = 1;
      for (int d : shape) n *= static_cast<size_t>(d);
      return n;
    }
  };
  std::vector<Entry> entries;

  size_t add(const std::string& name, std::initializer_list<int> shape) {
    Entry e;
    e.name = name;
    e.offset = data.size();
    e.shape.assign(shape);
    data.resize(data.size() + e.count(), T(0));
    entries.push_back(std::move(e));
    return entries.back().offset;
  }

  void finalize() { grad.assign(data.size(), T(0)); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
  size_t size() const { return data.size(); }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

}  // namespace tactsynth
