#pragma once

// Latent codec. The conv variant compresses 64x64x3 images to a 16x16x4
// latent through two stride-2 stages and mirrors back up; it is pretrained
// with plain reconstruction MSE and then frozen. An identity codec exists
// for debugging, in which case diffusion runs in pixel space.

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/nn.hpp"
#include "tactsynth/tensor.hpp"

namespace tactsynth {

struct CodecConfig {
  std::string type = "conv";  // conv | identity
  int image_size = 64;
  int channels1 = 16;
  int channels2 = 32;
  int latent_channels = 4;
  double target_mse = 0.003;

  int latent_hw() const { return type == "conv" ? image_size / 4 : image_size; }
  int latent_c() const { return type == "conv" ? latent_channels : 3; }

  static CodecConfig from_json(const nlohmann::json& j) {
    CodecConfig c;
    c.type = j.value("type", c.type);
    c.image_size = j.value("image_size", c.image_size);
    c.channels1 = j.value("channels1", c.channels1);
    c.channels2 = j.value("channels2", c.channels2);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.target_mse = j.value("target_mse", c.target_mse);
    if (c.type != "conv" && c.type != "identity")
      fail(ErrorCode::BadConfig, "codec type must be conv or identity");
    if (c.type == "conv" && c.image_size % 4 != 0)
      fail(ErrorCode::BadConfig, "conv codec needs image_size divisible by 4");
    return c;
  }

  nlohmann::json to_json() const {
    return {{"type", type},
            {"image_size", image_size},
            {"channels1", channels1},
            {"channels2", channels2},
            {"latent_channels", latent_channels},
            {"target_mse", target_mse}};
  }
};

template <typename T>
struct LatentCodec {
  CodecConfig cfg;
  ParamStore<T> store;
  // per-channel latent normalization fit on the training corpus
  std::vector<T> latent_mean;
  std::vector<T> latent_std;

  nn::Conv2d<T> e1, e2, e3, e4;
  nn::Conv2d<T> d1, d2, d3, d4;

  explicit LatentCodec(const CodecConfig& config = {}) : cfg(config) {
    if (cfg.type == "conv") {
      e1.init(store, "enc1", 3, cfg.channels1, 3, 1);
      e2.init(store, "enc2", cfg.channels1, cfg.channels2, 3, 2);
      e3.init(store, "enc3", cfg.channels2, cfg.channels2, 3, 2);
      e4.init(store, "enc4", cfg.channels2, cfg.latent_channels, 3, 1);
      d1.init(store, "dec1", cfg.latent_channels, cfg.channels2, 3, 1);
      d2.init(store, "dec2", cfg.channels2, cfg.channels2, 3, 1);
      d3.init(store, "dec3", cfg.channels2, cfg.channels1, 3, 1);
      d4.init(store, "dec4", cfg.channels1, 3, 3, 1);
    }
    store.finalize();
    latent_mean.assign(cfg.latent_c(), T(0));
    latent_std.assign(cfg.latent_c(), T(1));
  }

  void init_weights(Rng& rng) { nn::init_params(store, rng); }

  struct Cache {
    Tensor3<T> x;
    Tensor3<T> a1, s1, a2, s2, a3, s3, z;
    Tensor3<T> b1, t1, u2, b2, t2, u3, b3, t3, recon;
  };

  // Raw (unnormalized) latent.
  Tensor3<T> encode(const Tensor3<T>& img) const {
    if (cfg.type == "identity") return img;
    const T* p = store.data.data();
    Tensor3<T> a1, s1, a2, s2, a3, s3, z;
    e1.forward(p, img, a1);
    nn::silu_forward(a1, s1);
    e2.forward(p, s1, a2);
    nn::silu_forward(a2, s2);
    e3.forward(p, s2, a3);
    nn::silu_forward(a3, s3);
    e4.forward(p, s3, z);
    return z;
  }

  Tensor3<T> decode(const Tensor3<T>& z) const {
    if (cfg.type == "identity") return z;
    const T* p = store.data.data();
    Tensor3<T> b1, t1, u2, b2, t2, u3, b3, t3, out;
    d1.forward(p, z, b1);
    nn::silu_forward(b1, t1);
    nn::upsample2_forward(t1, u2);
    d2.forward(p, u2, b2);
    nn::silu_forward(b2, t2);
    nn::upsample2_forward(t2, u3);
    d3.forward(p, u3, b3);
    nn::silu_forward(b3, t3);
    d4.forward(p, t3, out);
    return out;
  }

  // Full reconstruction pass retaining activations for backward.
  Tensor3<T> forward(const Tensor3<T>& img, Cache& c) const {
    if (cfg.type == "identity") {
      c.recon = img;
      return img;
    }
    const T* p = store.data.data();
    c.x = img;
    e1.forward(p, c.x, c.a1);
    nn::silu_forward(c.a1, c.s1);
    e2.forward(p, c.s1, c.a2);
    nn::silu_forward(c.a2, c.s2);
    e3.forward(p, c.s2, c.a3);
    nn::silu_forward(c.a3, c.s3);
    e4.forward(p, c.s3, c.z);
    d1.forward(p, c.z, c.b1);
    nn::silu_forward(c.b1, c.t1);
    nn::upsample2_forward(c.t1, c.u2);
    d2.forward(p, c.u2, c.b2);
    nn::silu_forward(c.b2, c.t2);
    nn::upsample2_forward(c.t2, c.u3);
    d3.forward(p, c.u3, c.b3);
    nn::silu_forward(c.b3, c.t3);
    d4.forward(p, c.t3, c.recon);
    return c.recon;
  }

  // Accumulates parameter gradients into g for the reconstruction loss
  // gradient drecon.
  void backward(const Cache& c, const Tensor3<T>& drecon, T* g) const {
    if (cfg.type == "identity") return;
    const T* p = store.data.data();
    Tensor3<T> dt3, db3, du3, dt2, db2, du2, dt1, db1, dz;
    Tensor3<T> ds3, da3, ds2, da2, ds1, da1;
    d4.backward(p, g, c.t3, drecon, &dt3);
    nn::silu_backward(c.b3, dt3, db3);
    d3.backward(p, g, c.u3, db3, &du3);
    nn::upsample2_backward(du3, dt2);
    nn::silu_backward(c.b2, dt2, db2);
    d2.backward(p, g, c.u2, db2, &du2);
    nn::upsample2_backward(du2, dt1);
    nn::silu_backward(c.b1, dt1, db1);
    d1.backward(p, g, c.z, db1, &dz);
    e4.backward(p, g, c.s3, dz, &ds3);
    nn::silu_backward(c.a3, ds3, da3);
    e3.backward(p, g, c.s2, da3, &ds2);
    nn::silu_backward(c.a2, ds2, da2);
    e2.backward(p, g, c.s1, da2, &ds1);
    nn::silu_backward(c.a1, ds1, da1);
    e1.backward(p, g, c.x, da1, nullptr);
  }

  // Encode then apply the stored per-channel normalization.
  Tensor3<T> encode_normalized(const Tensor3<T>& img) const {
    Tensor3<T> z = encode(img);
    for (int c = 0; c < z.c; ++c) {
      T* plane = z.plane(c);
      const T mu = latent_mean[c];
      const T inv = T(1) / latent_std[c];
      for (int i = 0; i < z.h * z.w; ++i) plane[i] = (plane[i] - mu) * inv;
    }
    return z;
  }

  Tensor3<T> decode_normalized(const Tensor3<T>& zn) const {
    Tensor3<T> z = zn;
    for (int c = 0; c < z.c; ++c) {
      T* plane = z.plane(c);
      const T mu = latent_mean[c];
      const T sd = latent_std[c];
      for (int i = 0; i < z.h * z.w; ++i) plane[i] = plane[i] * sd + mu;
    }
    return decode(z);
  }

  // Fit per-channel mean/std of raw latents over a corpus.
  void fit_latent_stats(const std::vector<Tensor3<T>>& images) {
    const int lc = cfg.latent_c();
    std::vector<double> sum(lc, 0.0), sq(lc, 0.0);
    size_t per_channel = 0;
    for (const auto& img : images) {
      const Tensor3<T> z = encode(img);
      per_channel += static_cast<size_t>(z.h) * z.w;
      for (int c = 0; c < lc; ++c) {
        const T* plane = z.plane(c);
        for (int i = 0; i < z.h * z.w; ++i) {
          sum[c] += plane[i];
          sq[c] += static_cast<double>(plane[i]) * plane[i];
        }
      }
    }
    if (per_channel == 0) fail(ErrorCode::BadConfig, "no images for stats");
    for (int c = 0; c < lc; ++c) {
      const double mu = sum[c] / static_cast<double>(per_channel);
      const double var = sq[c] / static_cast<double>(per_channel) - mu * mu;
      latent_mean[c] = static_cast<T>(mu);
      latent_std[c] = static_cast<T>(std::sqrt(std::max(var, 1e-8)));
    }
  }
};

}  // namespace tactsynth
