#pragma once

// Layer primitives with explicit forward/backward passes over the flat
// parameter store. Backward overwrites input gradients (callers sum when a
// tensor feeds several consumers) and accumulates parameter gradients; a
// null gradient pointer skips parameter accumulation, which is how frozen
// sub-networks propagate without training.

#include <cmath>
#include <string>
#include <vector>

#include "tactsynth/rng.hpp"
#include "tactsynth/tensor.hpp"

namespace tactsynth {
namespace nn {

template <typename T>
inline T silu_of(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return x * s;
}

template <typename T>
inline T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
inline void silu_forward(const Tensor3<T>& x, Tensor3<T>& y) {
  y.resize_like(x.c, x.h, x.w);
  for (size_t i = 0; i < x.size(); ++i) y.v[i] = silu_of(x.v[i]);
}

// dy -> dx given the pre-activation x.
template <typename T>
inline void silu_backward(const Tensor3<T>& x, const Tensor3<T>& dy,
                          Tensor3<T>& dx) {
  dx.resize_like(x.c, x.h, x.w);
  for (size_t i = 0; i < x.size(); ++i) dx.v[i] = dy.v[i] * silu_grad(x.v[i]);
}

template <typename T>
struct Conv2d {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  size_t w_off = 0, b_off = 0;

  void init(ParamStore<T>& store, const std::string& name, int in_c_,
            int out_c_, int k_, int stride_ = 1, int pad_ = -1) {
    in_c = in_c_;
    out_c = out_c_;
    k = k_;
    stride = stride_;
    pad = pad_ < 0 ? k_ / 2 : pad_;
    w_off = store.add(name + ".w", {out_c, in_c, k, k});
    b_off = store.add(name + ".b", {out_c});
  }

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }

  void forward(const T* p, const Tensor3<T>& x, Tensor3<T>& y) const {
    const int oh = out_h(x.h), ow = out_w(x.w);
    y.resize_like(out_c, oh, ow);
    const T* W = p + w_off;
    const T* B = p + b_off;
    for (int oc = 0; oc < out_c; ++oc) {
      T* yp = y.plane(oc);
      const T bias = B[oc];
      for (int i = 0; i < oh * ow; ++i) yp[i] = bias;
      for (int ic = 0; ic < in_c; ++ic) {
        const T* xp = x.plane(ic);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T w = W[((static_cast<size_t>(oc) * in_c + ic) * k + ky) * k +
                          kx];
            if (w == T(0)) continue;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              const T* xrow = xp + static_cast<size_t>(iy) * x.w;
              T* yrow = yp + static_cast<size_t>(oy) * ow;
              // ox range keeping ix = ox*stride + kx - pad within [0, w)
              int ox0 = 0;
              while (ox0 * stride + kx - pad < 0) ++ox0;
              int ox1 = ow;
              while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= x.w) --ox1;
              const T* xs = xrow + (static_cast<size_t>(ox0) * stride + kx - pad);
              if (stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox)
                  yrow[ox] += w * xs[ox - ox0];
              } else {
                for (int ox = ox0; ox < ox1; ++ox)
                  yrow[ox] += w * xs[static_cast<size_t>(ox - ox0) * stride];
              }
            }
          }
        }
      }
    }
  }

  // g may be null (frozen layer); dx may be null (first layer of a graph).
  void backward(const T* p, T* g, const Tensor3<T>& x, const Tensor3<T>& dy,
                Tensor3<T>* dx) const {
    const int oh = dy.h, ow = dy.w;
    const T* W = p + w_off;
    if (dx) dx->resize_like(x.c, x.h, x.w);
    for (int oc = 0; oc < out_c; ++oc) {
      const T* dyp = dy.plane(oc);
      if (g) {
        T acc = T(0);
        for (int i = 0; i < oh * ow; ++i) acc += dyp[i];
        g[b_off + oc] += acc;
      }
      for (int ic = 0; ic < in_c; ++ic) {
        const T* xp = x.plane(ic);
        T* dxp = dx ? dx->plane(ic) : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const size_t widx =
                ((static_cast<size_t>(oc) * in_c + ic) * k + ky) * k + kx;
            const T w = W[widx];
            T wacc = T(0);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              const T* xrow = xp + static_cast<size_t>(iy) * x.w;
              const T* dyrow = dyp + static_cast<size_t>(oy) * ow;
              T* dxrow = dxp ? dxp + static_cast<size_t>(iy) * x.w : nullptr;
              int ox0 = 0;
              while (ox0 * stride + kx - pad < 0) ++ox0;
              int ox1 = ow;
              while (ox1 > ox0 && (ox1 - 1) * stride + kx - pad >= x.w) --ox1;
              for (int ox = ox0; ox < ox1; ++ox) {
                const int ix = ox * stride + kx - pad;
                wacc += dyrow[ox] * xrow[ix];
                if (dxrow) dxrow[ix] += w * dyrow[ox];
              }
            }
            if (g) g[w_off + widx] += wacc;
          }
        }
      }
    }
  }
};

template <typename T>
struct Linear {
  int in_n = 0, out_n = 0;
  size_t w_off = 0, b_off = 0;

  void init(ParamStore<T>& store, const std::string& name, int in_n_,
            int out_n_) {
    in_n = in_n_;
    out_n = out_n_;
    w_off = store.add(name + ".w", {out_n, in_n});
    b_off = store.add(name + ".b", {out_n});
  }

  void forward(const T* p, const T* x, T* y) const {
    const T* W = p + w_off;
    const T* B = p + b_off;
    for (int o = 0; o < out_n; ++o) {
      T acc = B[o];
      const T* wr = W + static_cast<size_t>(o) * in_n;
      for (int i = 0; i < in_n; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }

  // dx (size in_n) overwritten unless null; param grads accumulate into g.
  void backward(const T* p, T* g, const T* x, const T* dy, T* dx) const {
    const T* W = p + w_off;
    if (dx)
      for (int i = 0; i < in_n; ++i) dx[i] = T(0);
    for (int o = 0; o < out_n; ++o) {
      const T d = dy[o];
      const T* wr = W + static_cast<size_t>(o) * in_n;
      if (g) {
        g[b_off + o] += d;
        T* gr = g + w_off + static_cast<size_t>(o) * in_n;
        for (int i = 0; i < in_n; ++i) gr[i] += d * x[i];
      }
      if (dx)
        for (int i = 0; i < in_n; ++i) dx[i] += d * wr[i];
    }
  }
};

template <typename T>
inline void upsample2_forward(const Tensor3<T>& x, Tensor3<T>& y) {
  y.resize_like(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c)
    for (int iy = 0; iy < x.h; ++iy)
      for (int ix = 0; ix < x.w; ++ix) {
        const T v = x.at(c, iy, ix);
        y.at(c, 2 * iy, 2 * ix) = v;
        y.at(c, 2 * iy, 2 * ix + 1) = v;
        y.at(c, 2 * iy + 1, 2 * ix) = v;
        y.at(c, 2 * iy + 1, 2 * ix + 1) = v;
      }
}

template <typename T>
inline void upsample2_backward(const Tensor3<T>& dy, Tensor3<T>& dx) {
  dx.resize_like(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dx.c; ++c)
    for (int iy = 0; iy < dx.h; ++iy)
      for (int ix = 0; ix < dx.w; ++ix)
        dx.at(c, iy, ix) = dy.at(c, 2 * iy, 2 * ix) +
                           dy.at(c, 2 * iy, 2 * ix + 1) +
                           dy.at(c, 2 * iy + 1, 2 * ix) +
                           dy.at(c, 2 * iy + 1, 2 * ix + 1);
}

// Per-channel bias broadcast over the spatial plane.
template <typename T>
inline void add_channel_bias(Tensor3<T>& x, const T* bias) {
  for (int c = 0; c < x.c; ++c) {
    T* p = x.plane(c);
    const T b = bias[c];
    for (int i = 0; i < x.h * x.w; ++i) p[i] += b;
  }
}

template <typename T>
inline void channel_bias_grad(const Tensor3<T>& dy, T* dbias) {
  for (int c = 0; c < dy.c; ++c) {
    const T* p = dy.plane(c);
    T acc = T(0);
    for (int i = 0; i < dy.h * dy.w; ++i) acc += p[i];
    dbias[c] = acc;
  }
}

// Kaiming-style fan-in init for every weight matrix; biases stay zero.
// Entries whose name ends in ".zero.w" / ".zero.b" stay exactly zero.
template <typename T>
inline void init_params(ParamStore<T>& store, Rng& rng) {
  for (const auto& e : store.entries) {
    const bool is_weight = e.name.size() > 2 &&
                           e.name.compare(e.name.size() - 2, 2, ".w") == 0;
    if (!is_weight) continue;
    if (e.name.find(".zero.") != std::string::npos) continue;
    size_t fan_in = 1;
    for (size_t d = 1; d < e.shape.size(); ++d)
      fan_in *= static_cast<size_t>(e.shape[d]);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (size_t i = 0; i < e.count(); ++i)
      store.data[e.offset + i] = static_cast<T>(rng.normal() * std_dev);
  }
}

}  // namespace nn
}  // namespace tactsynth
