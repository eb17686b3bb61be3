#pragma once

// Dual-conditioned noise predictor. A small U-shaped conv net over the
// latent (two resolutions plus skip) receives the timestep and the 8-d
// condition embedding as per-channel biases in every residual block. The
// control branch is a copy-shaped encoder over the (latent-resolution)
// control image whose features enter the trunk through 1x1 projections that
// start at exactly zero, so an untrained branch cannot perturb the base
// model. Null text conditions use a learned null embedding; a null control
// is the all-zero control image.

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/nn.hpp"
#include "tactsynth/prompts.hpp"
#include "tactsynth/tensor.hpp"

namespace tactsynth {

struct DenoiserConfig {
  int latent_c = 4;
  int latent_hw = 16;
  int base_channels = 32;
  int emb_dim = 64;
  int time_dim = 32;  // sinusoidal feature count, even
  int cond_dim = ConditionEmbedding::kDim;

  static DenoiserConfig from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.latent_c = j.value("latent_c", c.latent_c);
    c.latent_hw = j.value("latent_hw", c.latent_hw);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.emb_dim = j.value("emb_dim", c.emb_dim);
    c.time_dim = j.value("time_dim", c.time_dim);
    if (c.latent_hw % 2 != 0 || c.time_dim % 2 != 0)
      fail(ErrorCode::BadConfig, "latent_hw and time_dim must be even");
    return c;
  }

  nlohmann::json to_json() const {
    return {{"latent_c", latent_c},
            {"latent_hw", latent_hw},
            {"base_channels", base_channels},
            {"emb_dim", emb_dim},
            {"time_dim", time_dim}};
  }
};

inline std::vector<double> time_features(double t, int dim) {
  const int half = dim / 2;
  std::vector<double> f(dim);
  for (int k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * k / std::max(1, half - 1));
    f[k] = std::sin(t * freq);
    f[half + k] = std::cos(t * freq);
  }
  return f;
}

template <typename T>
struct ResBlock {
  nn::Conv2d<T> conv1, conv2;
  nn::Linear<T> emb_proj;
  int channels = 0;

  void init(ParamStore<T>& store, const std::string& name, int ch,
            int emb_dim) {
    channels = ch;
    conv1.init(store, name + ".conv1", ch, ch, 3, 1);
    conv2.init(store, name + ".conv2", ch, ch, 3, 1);
    emb_proj.init(store, name + ".emb", emb_dim, ch);
  }

  struct Cache {
    Tensor3<T> x, a, s;
  };

  void forward(const T* p, const Tensor3<T>& x, const std::vector<T>& embs,
               Cache& c, Tensor3<T>& out) const {
    c.x = x;
    conv1.forward(p, x, c.a);
    std::vector<T> bias(channels);
    emb_proj.forward(p, embs.data(), bias.data());
    nn::add_channel_bias(c.a, bias.data());
    nn::silu_forward(c.a, c.s);
    conv2.forward(p, c.s, out);
    for (size_t i = 0; i < out.size(); ++i) out.v[i] += x.v[i];
  }

  // dx overwritten; d(embs) accumulated into dembs.
  void backward(const T* p, T* g, const Cache& c, const std::vector<T>& embs,
                const Tensor3<T>& dy, Tensor3<T>& dx,
                std::vector<T>& dembs) const {
    Tensor3<T> ds, da;
    conv2.backward(p, g, c.s, dy, &ds);
    nn::silu_backward(c.a, ds, da);
    std::vector<T> dbias(channels), demb_local(emb_proj.in_n);
    nn::channel_bias_grad(da, dbias.data());
    emb_proj.backward(p, g, embs.data(), dbias.data(), demb_local.data());
    for (int i = 0; i < emb_proj.in_n; ++i) dembs[i] += demb_local[i];
    conv1.backward(p, g, c.x, da, &dx);
    for (size_t i = 0; i < dx.size(); ++i) dx.v[i] += dy.v[i];
  }
};

template <typename T>
struct Denoiser {
  DenoiserConfig cfg;
  ParamStore<T> base;
  ParamStore<T> ctrl;
  bool has_control = false;

  nn::Linear<T> lin_t1, lin_t2, lin_c1, lin_c2;
  size_t null_embed_off = 0;
  nn::Conv2d<T> conv_in, down, up_conv, conv_out;
  ResBlock<T> rb1, rb2, rb3, rb4;

  nn::Conv2d<T> cstem, cdown;
  ResBlock<T> crb1, crb2;
  nn::Conv2d<T> zproj1, zproj2;

  explicit Denoiser(const DenoiserConfig& config = {}) : cfg(config) {
    const int C = cfg.base_channels;
    lin_t1.init(base, "time1", cfg.time_dim, cfg.emb_dim);
    lin_t2.init(base, "time2", cfg.emb_dim, cfg.emb_dim);
    lin_c1.init(base, "cond1", cfg.cond_dim, cfg.emb_dim);
    lin_c2.init(base, "cond2", cfg.emb_dim, cfg.emb_dim);
    null_embed_off = base.add("null_embed", {cfg.cond_dim});
    conv_in.init(base, "conv_in", cfg.latent_c, C, 3, 1);
    rb1.init(base, "rb1", C, cfg.emb_dim);
    down.init(base, "down", C, 2 * C, 3, 2);
    rb2.init(base, "rb2", 2 * C, cfg.emb_dim);
    rb3.init(base, "rb3", 2 * C, cfg.emb_dim);
    up_conv.init(base, "up_conv", 2 * C, C, 3, 1);
    rb4.init(base, "rb4", C, cfg.emb_dim);
    conv_out.init(base, "conv_out.zero", C, cfg.latent_c, 3, 1);
    base.finalize();
  }

  void init_weights(Rng& rng) { nn::init_params(base, rng); }

  // The control branch is created when control training begins; projections
  // are zero-initialized, remaining weights random, and blocks whose shape
  // matches the trained trunk start from copies of it.
  void add_control_branch(Rng& rng, bool copy_from_base = true) {
    if (has_control) return;
    const int C = cfg.base_channels;
    cstem.init(ctrl, "cstem", 1, C, 3, 1);
    crb1.init(ctrl, "crb1", C, cfg.emb_dim);
    cdown.init(ctrl, "cdown", C, 2 * C, 3, 2);
    crb2.init(ctrl, "crb2", 2 * C, cfg.emb_dim);
    zproj1.init(ctrl, "zproj1.zero", C, C, 1, 1);
    zproj2.init(ctrl, "zproj2.zero", 2 * C, 2 * C, 1, 1);
    ctrl.finalize();
    nn::init_params(ctrl, rng);
    if (copy_from_base) {
      copy_entry("rb1.conv1", "crb1.conv1");
      copy_entry("rb1.conv2", "crb1.conv2");
      copy_entry("rb1.emb", "crb1.emb");
      copy_entry("down", "cdown");
      copy_entry("rb2.conv1", "crb2.conv1");
      copy_entry("rb2.conv2", "crb2.conv2");
      copy_entry("rb2.emb", "crb2.emb");
    }
    has_control = true;
  }

  void copy_entry(const std::string& from_base, const std::string& to_ctrl) {
    for (const char* suffix : {".w", ".b"}) {
      const auto* src = base.find(from_base + suffix);
      const auto* dst = ctrl.find(to_ctrl + suffix);
      if (!src || !dst || src->count() != dst->count()) continue;
      std::copy(base.data.begin() + src->offset,
                base.data.begin() + src->offset + src->count(),
                ctrl.data.begin() + dst->offset);
    }
  }

  struct Workspace {
    std::vector<T> tf, t1, t1s, te, cf, c1, c1s, ce, emb, embs;
    bool cond_was_null = false;
    bool used_control = false;
    Tensor3<T> z, h0, h1, h1i, h2, h3, h3i, h4, h5u, h5, h6, h7, eps;
    typename ResBlock<T>::Cache rb1c, rb2c, rb3c, rb4c;
    Tensor3<T> ctrl_in, cb0, cb1, cd, cb2, i1, i2;
    typename ResBlock<T>::Cache crb1c, crb2c;
  };

  void check_latent(const Tensor3<T>& z) const {
    if (z.c != cfg.latent_c || z.h != cfg.latent_hw || z.w != cfg.latent_hw)
      fail(ErrorCode::ShapeMismatch, "latent shape mismatch");
  }

  // cond: 8-vector or nullptr (null condition); control: latent-resolution
  // 1-channel tensor or nullptr (zero control image).
  const Tensor3<T>& forward(const Tensor3<T>& z, int t, const T* cond,
                            const Tensor3<T>* control, Workspace& ws) const {
    check_latent(z);
    const T* pb = base.data.data();

    // embedding pathway
    const auto tfd = time_features(static_cast<double>(t), cfg.time_dim);
    ws.tf.assign(tfd.begin(), tfd.end());
    ws.t1.resize(cfg.emb_dim);
    lin_t1.forward(pb, ws.tf.data(), ws.t1.data());
    ws.t1s.resize(cfg.emb_dim);
    for (int i = 0; i < cfg.emb_dim; ++i) ws.t1s[i] = nn::silu_of(ws.t1[i]);
    ws.te.resize(cfg.emb_dim);
    lin_t2.forward(pb, ws.t1s.data(), ws.te.data());

    ws.cond_was_null = cond == nullptr;
    ws.cf.resize(cfg.cond_dim);
    const T* cf_src = cond ? cond : pb + null_embed_off;
    std::copy(cf_src, cf_src + cfg.cond_dim, ws.cf.begin());
    ws.c1.resize(cfg.emb_dim);
    lin_c1.forward(pb, ws.cf.data(), ws.c1.data());
    ws.c1s.resize(cfg.emb_dim);
    for (int i = 0; i < cfg.emb_dim; ++i) ws.c1s[i] = nn::silu_of(ws.c1[i]);
    ws.ce.resize(cfg.emb_dim);
    lin_c2.forward(pb, ws.c1s.data(), ws.ce.data());

    ws.emb.resize(cfg.emb_dim);
    ws.embs.resize(cfg.emb_dim);
    for (int i = 0; i < cfg.emb_dim; ++i) {
      ws.emb[i] = ws.te[i] + ws.ce[i];
      ws.embs[i] = nn::silu_of(ws.emb[i]);
    }

    // control branch
    ws.used_control = has_control;
    if (has_control) {
      const T* pc = ctrl.data.data();
      if (control) {
        if (control->c != 1 || control->h != cfg.latent_hw ||
            control->w != cfg.latent_hw)
          fail(ErrorCode::ShapeMismatch, "control tensor shape mismatch");
        ws.ctrl_in = *control;
      } else {
        ws.ctrl_in.resize_like(1, cfg.latent_hw, cfg.latent_hw);
      }
      cstem.forward(pc, ws.ctrl_in, ws.cb0);
      crb1.forward(pc, ws.cb0, ws.embs, ws.crb1c, ws.cb1);
      zproj1.forward(pc, ws.cb1, ws.i1);
      cdown.forward(pc, ws.cb1, ws.cd);
      crb2.forward(pc, ws.cd, ws.embs, ws.crb2c, ws.cb2);
      zproj2.forward(pc, ws.cb2, ws.i2);
    }

    // trunk
    ws.z = z;
    conv_in.forward(pb, ws.z, ws.h0);
    rb1.forward(pb, ws.h0, ws.embs, ws.rb1c, ws.h1);
    ws.h1i = ws.h1;
    if (ws.used_control)
      for (size_t i = 0; i < ws.h1i.size(); ++i) ws.h1i.v[i] += ws.i1.v[i];
    down.forward(pb, ws.h1i, ws.h2);
    rb2.forward(pb, ws.h2, ws.embs, ws.rb2c, ws.h3);
    ws.h3i = ws.h3;
    if (ws.used_control)
      for (size_t i = 0; i < ws.h3i.size(); ++i) ws.h3i.v[i] += ws.i2.v[i];
    rb3.forward(pb, ws.h3i, ws.embs, ws.rb3c, ws.h4);
    nn::upsample2_forward(ws.h4, ws.h5u);
    up_conv.forward(pb, ws.h5u, ws.h5);
    ws.h6 = ws.h5;
    for (size_t i = 0; i < ws.h6.size(); ++i) ws.h6.v[i] += ws.h1i.v[i];
    rb4.forward(pb, ws.h6, ws.embs, ws.rb4c, ws.h7);
    conv_out.forward(pb, ws.h7, ws.eps);
    return ws.eps;
  }

  // g_base / g_ctrl may be null to freeze that parameter set. Gradients
  // accumulate; activations come from the matching forward call.
  void backward(const Tensor3<T>& deps, Workspace& ws, T* g_base,
                T* g_ctrl) const {
    const T* pb = base.data.data();
    std::vector<T> dembs(cfg.emb_dim, T(0));

    Tensor3<T> dh7, dh6, dh5, dh5u, dh4, dh3i, dh3, dh2, dh1i, dh1, dh0;
    conv_out.backward(pb, g_base, ws.h7, deps, &dh7);
    rb4.backward(pb, g_base, ws.rb4c, ws.embs, dh7, dh6, dembs);
    up_conv.backward(pb, g_base, ws.h5u, dh6, &dh5u);
    nn::upsample2_backward(dh5u, dh4);
    rb3.backward(pb, g_base, ws.rb3c, ws.embs, dh4, dh3i, dembs);
    rb2.backward(pb, g_base, ws.rb2c, ws.embs, dh3i, dh2, dembs);
    down.backward(pb, g_base, ws.h1i, dh2, &dh1i);
    // skip connection joins at h6
    for (size_t i = 0; i < dh1i.size(); ++i) dh1i.v[i] += dh6.v[i];
    rb1.backward(pb, g_base, ws.rb1c, ws.embs, dh1i, dh0, dembs);
    conv_in.backward(pb, g_base, ws.z, dh0, nullptr);

    if (ws.used_control) {
      const T* pc = ctrl.data.data();
      // injections received dh3i (at 8x8) and dh1i (at 16x16) directly
      Tensor3<T> dcb2, dcd, dcb1a, dcb1, dcb0;
      zproj2.backward(pc, g_ctrl, ws.cb2, dh3i, &dcb2);
      crb2.backward(pc, g_ctrl, ws.crb2c, ws.embs, dcb2, dcd, dembs);
      cdown.backward(pc, g_ctrl, ws.cb1, dcd, &dcb1a);
      zproj1.backward(pc, g_ctrl, ws.cb1, dh1i, &dcb1);
      for (size_t i = 0; i < dcb1.size(); ++i) dcb1.v[i] += dcb1a.v[i];
      crb1.backward(pc, g_ctrl, ws.crb1c, ws.embs, dcb1, dcb0, dembs);
      cstem.backward(pc, g_ctrl, ws.ctrl_in, dcb0, nullptr);
    }

    // embedding pathway (base parameters only)
    if (g_base) {
      std::vector<T> demb(cfg.emb_dim), dte(cfg.emb_dim), dce(cfg.emb_dim);
      for (int i = 0; i < cfg.emb_dim; ++i)
        demb[i] = dembs[i] * nn::silu_grad(ws.emb[i]);
      std::vector<T> dt1s(cfg.emb_dim), dt1(cfg.emb_dim);
      lin_t2.backward(pb, g_base, ws.t1s.data(), demb.data(), dt1s.data());
      for (int i = 0; i < cfg.emb_dim; ++i)
        dt1[i] = dt1s[i] * nn::silu_grad(ws.t1[i]);
      lin_t1.backward(pb, g_base, ws.tf.data(), dt1.data(), nullptr);
      std::vector<T> dc1s(cfg.emb_dim), dc1(cfg.emb_dim), dcf(cfg.cond_dim);
      lin_c2.backward(pb, g_base, ws.c1s.data(), demb.data(), dc1s.data());
      for (int i = 0; i < cfg.emb_dim; ++i)
        dc1[i] = dc1s[i] * nn::silu_grad(ws.c1[i]);
      lin_c1.backward(pb, g_base, ws.cf.data(), dc1.data(), dcf.data());
      if (ws.cond_was_null)
        for (int i = 0; i < cfg.cond_dim; ++i)
          g_base[null_embed_off + i] += dcf[i];
    }
  }
};

// Single forward evaluation without training bookkeeping.
template <typename T>
inline Tensor3<T> denoise(const Denoiser<T>& net, const Tensor3<T>& z_t, int t,
                          const ConditionEmbedding* cond,
                          std::type_identity_t<const Tensor3<T>*> control) {
  typename Denoiser<T>::Workspace ws;
  std::vector<T> cvec;
  const T* cptr = nullptr;
  if (cond) {
    cvec.assign(cond->v.begin(), cond->v.end());
    cptr = cvec.data();
  }
  net.forward(z_t, t, cptr, control, ws);
  return ws.eps;
}

}  // namespace tactsynth
