#pragma once

// Training objectives and sampling: AdamW, the epsilon-prediction loss over
// noised latents with condition dropout, deterministic DDIM, and
// classifier-free guidance fusion. Batch items may be processed by worker
// threads; every random draw happens up front in item order and gradients
// reduce in item order, so results are bit-identical for any thread count.

#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/codec.hpp"
#include "tactsynth/denoiser.hpp"
#include "tactsynth/rng.hpp"
#include "tactsynth/schedule.hpp"

namespace tactsynth {

// eps_pred = eps_uncond + w * (eps_cond - eps_uncond). The w = 1 identity
// must return the conditional prediction bit-exactly, which the algebraic
// form cannot guarantee in floating point, so it short-circuits.
template <typename T>
inline Tensor3<T> cfg_fuse(const Tensor3<T>& eps_uncond,
                           const Tensor3<T>& eps_cond, double w) {
  require_same_shape(eps_uncond, eps_cond, "cfg_fuse");
  if (w == 1.0) return eps_cond;
  Tensor3<T> out(eps_uncond.c, eps_uncond.h, eps_uncond.w);
  const T wt = static_cast<T>(w);
  for (size_t i = 0; i < out.size(); ++i)
    out.v[i] = eps_uncond.v[i] + wt * (eps_cond.v[i] - eps_uncond.v[i]);
  return out;
}

template <typename T>
struct AdamW {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  std::vector<T> m, v;
  int64_t t = 0;

  void init(size_t n) {
    m.assign(n, T(0));
    v.assign(n, T(0));
    t = 0;
  }

  void step(std::vector<T>& params, const std::vector<T>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * g;
      const double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      params[i] -= static_cast<T>(
          lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i]));
    }
  }
};

struct StageConfig {
  int steps = 2000;
  double lr = 1e-5;
  int batch_size = 8;
  double weight_decay = 0.0;
  double cond_dropout = 0.1;
  int val_interval = 100;
  int patience = 10;

  static StageConfig from_json(const nlohmann::json& j,
                               const StageConfig& def) {
    StageConfig c = def;
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
    c.val_interval = j.value("val_interval", c.val_interval);
    c.patience = j.value("patience", c.patience);
    if (c.batch_size < 1 || c.steps < 0)
      fail(ErrorCode::BadConfig, "invalid stage config");
    return c;
  }

  nlohmann::json to_json() const {
    return {{"steps", steps},
            {"lr", lr},
            {"batch_size", batch_size},
            {"weight_decay", weight_decay},
            {"cond_dropout", cond_dropout},
            {"val_interval", val_interval},
            {"patience", patience}};
  }
};

template <typename T>
struct TrainItem {
  Tensor3<T> z0;       // normalized latent of the target image
  std::vector<T> cond;  // 8-d condition embedding
  Tensor3<T> control;   // latent-resolution control tensor (1 channel)
};

struct LossRow {
  int64_t step;
  double train_loss;
  double val_loss;  // NaN when not evaluated at this step
};

// One optimization step of the epsilon-prediction objective (random
// timestep, closed-form noising, condition dropout). Returns the batch loss.
template <typename T>
class DiffusionTrainer {
 public:
  DiffusionTrainer(Denoiser<T>& net, const NoiseSchedule& sched,
                   const StageConfig& cfg, bool train_base, bool train_ctrl,
                   uint64_t seed, int threads)
      : net_(net),
        sched_(sched),
        cfg_(cfg),
        train_base_(train_base),
        train_ctrl_(train_ctrl),
        rng_(seed, train_ctrl ? "train-control" : "train-base"),
        threads_(std::max(1, threads)) {
    opt_base_.lr = cfg.lr;
    opt_base_.weight_decay = cfg.weight_decay;
    opt_base_.init(net.base.size());
    opt_ctrl_ = opt_base_;
    opt_ctrl_.init(net.ctrl.size());
    const int B = cfg.batch_size;
    ws_.resize(B);
    if (train_base_) gbase_.assign(B, std::vector<T>(net.base.size(), T(0)));
    if (train_ctrl_) gctrl_.assign(B, std::vector<T>(net.ctrl.size(), T(0)));
  }

  double step(const std::vector<TrainItem<T>>& items, int64_t step_no) {
    if (items.empty()) fail(ErrorCode::BadConfig, "empty training set");
    const int B = cfg_.batch_size;
    struct Draw {
      size_t item;
      int t;
      Tensor3<T> eps;
      bool drop;
    };
    std::vector<Draw> draws(B);
    for (int b = 0; b < B; ++b) {
      draws[b].item = static_cast<size_t>(rng_.below(items.size()));
      draws[b].t = 1 + static_cast<int>(rng_.below(sched_.T));
      const auto& z0 = items[draws[b].item].z0;
      draws[b].eps.resize_like(z0.c, z0.h, z0.w);
      for (auto& e : draws[b].eps.v) e = static_cast<T>(rng_.normal());
      draws[b].drop = rng_.uniform() < cfg_.cond_dropout;
    }

    std::vector<double> losses(B, 0.0);
    auto work = [&](int b) {
      const Draw& d = draws[b];
      const TrainItem<T>& item = items[d.item];
      const Tensor3<T> z_t = forward_noise(item.z0, d.t, d.eps, sched_);
      const T* cond = d.drop ? nullptr : item.cond.data();
      const Tensor3<T>* ctrl =
          (d.drop || !net_.has_control) ? nullptr : &item.control;
      const Tensor3<T>& eps_hat = net_.forward(z_t, d.t, cond, ctrl, ws_[b]);

      const size_t n = eps_hat.size();
      Tensor3<T> deps(eps_hat.c, eps_hat.h, eps_hat.w);
      double loss = 0.0;
      const T scale = static_cast<T>(2.0 / (static_cast<double>(n) * B));
      for (size_t i = 0; i < n; ++i) {
        const T diff = eps_hat.v[i] - d.eps.v[i];
        loss += static_cast<double>(diff) * diff;
        deps.v[i] = scale * diff;
      }
      losses[b] = loss / static_cast<double>(n);
      net_.backward(deps, ws_[b],
                    train_base_ ? gbase_[b].data() : nullptr,
                    train_ctrl_ ? gctrl_[b].data() : nullptr);
    };
    run_parallel(B, work);

    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= B;
    if (!std::isfinite(loss))
      fail(ErrorCode::NonFiniteLoss,
           "loss diverged at step " + std::to_string(step_no));

    if (train_base_) reduce_and_step(net_.base.data, gbase_, opt_base_);
    if (train_ctrl_) reduce_and_step(net_.ctrl.data, gctrl_, opt_ctrl_);
    return loss;
  }

  // Deterministic validation loss with (t, eps) frozen per item.
  double val_loss(const std::vector<TrainItem<T>>& items) {
    if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (val_draws_.size() != items.size()) {
      Rng vr(substream_seed(0x7a11, "val"));
      val_draws_.clear();
      for (const auto& item : items) {
        ValDraw d;
        d.t = 1 + static_cast<int>(vr.below(sched_.T));
        d.eps.resize_like(item.z0.c, item.z0.h, item.z0.w);
        for (auto& e : d.eps.v) e = static_cast<T>(vr.normal());
        val_draws_.push_back(std::move(d));
      }
    }
    std::vector<double> losses(items.size(), 0.0);
    auto work = [&](int i) {
      const auto& item = items[i];
      const ValDraw& d = val_draws_[i];
      const Tensor3<T> z_t = forward_noise(item.z0, d.t, d.eps, sched_);
      const Tensor3<T>* ctrl = net_.has_control ? &item.control : nullptr;
      typename Denoiser<T>::Workspace ws;
      const Tensor3<T>& eps_hat =
          net_.forward(z_t, d.t, item.cond.data(), ctrl, ws);
      double loss = 0.0;
      for (size_t j = 0; j < eps_hat.size(); ++j) {
        const double diff = eps_hat.v[j] - d.eps.v[j];
        loss += diff * diff;
      }
      losses[i] = loss / static_cast<double>(eps_hat.size());
    };
    run_parallel(static_cast<int>(items.size()), work);
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(items.size());
  }

  // Full loop with early stopping on the validation loss; the best
  // parameters are restored at the end.
  std::vector<LossRow> run(const std::vector<TrainItem<T>>& train,
                           const std::vector<TrainItem<T>>& val) {
    std::vector<LossRow> rows;
    double best_val = std::numeric_limits<double>::infinity();
    int stale = 0;
    std::vector<T> best_base = net_.base.data;
    std::vector<T> best_ctrl = net_.ctrl.data;
    for (int64_t s = 1; s <= cfg_.steps; ++s) {
      const double loss = step(train, s);
      LossRow row{s, loss, std::numeric_limits<double>::quiet_NaN()};
      if (!val.empty() && cfg_.val_interval > 0 &&
          (s % cfg_.val_interval == 0 || s == cfg_.steps)) {
        row.val_loss = val_loss(val);
        if (row.val_loss < best_val) {
          best_val = row.val_loss;
          best_base = net_.base.data;
          best_ctrl = net_.ctrl.data;
          stale = 0;
        } else {
          ++stale;
        }
      }
      rows.push_back(row);
      if (stale > cfg_.patience) break;
    }
    if (best_val < std::numeric_limits<double>::infinity()) {
      net_.base.data = best_base;
      net_.ctrl.data = best_ctrl;
    }
    return rows;
  }

 private:
  struct ValDraw {
    int t;
    Tensor3<T> eps;
  };

  void run_parallel(int n, const std::function<void(int)>& fn) {
    if (threads_ <= 1 || n <= 1) {
      for (int i = 0; i < n; ++i) fn(i);
      return;
    }
    const int workers = std::min(threads_, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int k = 0; k < workers; ++k)
      pool.emplace_back([&, k] {
        for (int i = k; i < n; i += workers) fn(i);
      });
    for (auto& th : pool) th.join();
  }

  void reduce_and_step(std::vector<T>& params,
                       std::vector<std::vector<T>>& slot_grads, AdamW<T>& opt) {
    std::vector<T> total(params.size(), T(0));
    for (auto& g : slot_grads) {
      for (size_t i = 0; i < total.size(); ++i) total[i] += g[i];
      std::fill(g.begin(), g.end(), T(0));
    }
    opt.step(params, total);
  }

  Denoiser<T>& net_;
  const NoiseSchedule& sched_;
  StageConfig cfg_;
  bool train_base_;
  bool train_ctrl_;
  Rng rng_;
  int threads_;
  AdamW<T> opt_base_, opt_ctrl_;
  std::vector<typename Denoiser<T>::Workspace> ws_;
  std::vector<std::vector<T>> gbase_, gctrl_;
  std::vector<ValDraw> val_draws_;
};

// Plain reconstruction training for the codec.
template <typename T>
class CodecTrainer {
 public:
  CodecTrainer(LatentCodec<T>& codec, const StageConfig& cfg, uint64_t seed,
               int threads)
      : codec_(codec),
        cfg_(cfg),
        rng_(seed, "train-codec"),
        threads_(std::max(1, threads)) {
    opt_.lr = cfg.lr;
    opt_.weight_decay = cfg.weight_decay;
    opt_.init(codec.store.size());
    grads_.assign(cfg.batch_size, std::vector<T>(codec.store.size(), T(0)));
    caches_.resize(cfg.batch_size);
  }

  double step(const std::vector<Tensor3<T>>& images, int64_t step_no) {
    if (images.empty()) fail(ErrorCode::BadConfig, "empty codec corpus");
    const int B = cfg_.batch_size;
    std::vector<size_t> pick(B);
    for (int b = 0; b < B; ++b)
      pick[b] = static_cast<size_t>(rng_.below(images.size()));
    std::vector<double> losses(B, 0.0);
    auto work = [&](int b) {
      const Tensor3<T>& x = images[pick[b]];
      const Tensor3<T>& recon = codec_.forward(x, caches_[b]);
      Tensor3<T> drecon(recon.c, recon.h, recon.w);
      const size_t n = recon.size();
      const T scale = static_cast<T>(2.0 / (static_cast<double>(n) * B));
      double loss = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const T diff = recon.v[i] - x.v[i];
        loss += static_cast<double>(diff) * diff;
        drecon.v[i] = scale * diff;
      }
      losses[b] = loss / static_cast<double>(n);
      codec_.backward(caches_[b], drecon, grads_[b].data());
    };
    if (threads_ <= 1 || B <= 1) {
      for (int b = 0; b < B; ++b) work(b);
    } else {
      const int workers = std::min(threads_, B);
      std::vector<std::thread> pool;
      for (int k = 0; k < workers; ++k)
        pool.emplace_back([&, k] {
          for (int b = k; b < B; b += workers) work(b);
        });
      for (auto& th : pool) th.join();
    }
    double loss = 0.0;
    for (double l : losses) loss += l;
    loss /= B;
    if (!std::isfinite(loss))
      fail(ErrorCode::NonFiniteLoss,
           "codec loss diverged at step " + std::to_string(step_no));
    std::vector<T> total(codec_.store.size(), T(0));
    for (auto& g : grads_) {
      for (size_t i = 0; i < total.size(); ++i) total[i] += g[i];
      std::fill(g.begin(), g.end(), T(0));
    }
    opt_.step(codec_.store.data, total);
    return loss;
  }

  std::vector<LossRow> run(const std::vector<Tensor3<T>>& images) {
    std::vector<LossRow> rows;
    for (int64_t s = 1; s <= cfg_.steps; ++s) {
      const double loss = step(images, s);
      rows.push_back({s, loss, std::numeric_limits<double>::quiet_NaN()});
    }
    return rows;
  }

  double corpus_mse(const std::vector<Tensor3<T>>& images) const {
    double total = 0.0;
    size_t count = 0;
    for (const auto& x : images) {
      const Tensor3<T> recon = codec_.decode(codec_.encode(x));
      for (size_t i = 0; i < x.size(); ++i) {
        const double d = double(recon.v[i]) - double(x.v[i]);
        total += d * d;
      }
      count += x.size();
    }
    return total / static_cast<double>(count);
  }

 private:
  LatentCodec<T>& codec_;
  StageConfig cfg_;
  Rng rng_;
  int threads_;
  AdamW<T> opt_;
  std::vector<std::vector<T>> grads_;
  std::vector<typename LatentCodec<T>::Cache> caches_;
};

struct SamplerConfig {
  int steps = 50;
  double cfg_weight = 1.0;  // guidance weight >= 0
  uint64_t seed = 0;
};

// Deterministic DDIM (eta = 0) from seeded Gaussian noise in latent space.
template <typename T>
inline Tensor3<T> ddim_sample_latent(const Denoiser<T>& net,
                                     const NoiseSchedule& sched,
                                     const SamplerConfig& cfg,
                                     const ConditionEmbedding* cond,
                                     const Tensor3<T>* control) {
  if (cfg.steps < 1 || sched.T % cfg.steps != 0)
    fail(ErrorCode::BadConfig,
         "sampler steps must divide the schedule by even striding");
  if (cfg.cfg_weight < 0.0)
    fail(ErrorCode::BadConfig, "guidance weight must be >= 0");
  const int stride = sched.T / cfg.steps;

  Rng rng(cfg.seed, "sample-noise");
  Tensor3<T> z(net.cfg.latent_c, net.cfg.latent_hw, net.cfg.latent_hw);
  for (auto& v : z.v) v = static_cast<T>(rng.normal());

  std::vector<T> cvec;
  const T* cptr = nullptr;
  if (cond) {
    cvec.assign(cond->v.begin(), cond->v.end());
    cptr = cvec.data();
  }

  typename Denoiser<T>::Workspace ws;
  for (int t = sched.T; t > 0; t -= stride) {
    const int prev = t - stride;
    Tensor3<T> eps_pred = net.forward(z, t, cptr, control, ws);
    if (cfg.cfg_weight != 1.0) {
      const Tensor3<T> eps_cond = eps_pred;
      const Tensor3<T>& eps_uncond = net.forward(z, t, nullptr, nullptr, ws);
      eps_pred = cfg_fuse(eps_uncond, eps_cond, cfg.cfg_weight);
    }
    const T sab = static_cast<T>(sched.sqrt_alpha_bar(t));
    const T somab = static_cast<T>(sched.sqrt_one_minus_alpha_bar(t));
    const T sab_prev = static_cast<T>(sched.sqrt_alpha_bar(prev));
    const T somab_prev = static_cast<T>(sched.sqrt_one_minus_alpha_bar(prev));
    for (size_t i = 0; i < z.size(); ++i) {
      const T x0 = (z.v[i] - somab * eps_pred.v[i]) / sab;
      z.v[i] = sab_prev * x0 + somab_prev * eps_pred.v[i];
    }
    for (const T v : z.v)
      if (!std::isfinite(static_cast<double>(v)))
        fail(ErrorCode::NonFiniteLatent,
             "latent diverged at t = " + std::to_string(t));
  }
  return z;
}

// Full image sample: latent DDIM then decode, clipped to [0,1].
template <typename T>
inline ImageRGB ddim_sample(const Denoiser<T>& net, const LatentCodec<T>& codec,
                            const NoiseSchedule& sched, const SamplerConfig& cfg,
                            const ConditionEmbedding* cond,
                            const ImageF* control_image) {
  Tensor3<T> ctrl;
  const Tensor3<T>* ctrl_ptr = nullptr;
  if (control_image && net.has_control) {
    ctrl = tensor_from_gray<T>(
        downsample_to(*control_image, net.cfg.latent_hw));
    ctrl_ptr = &ctrl;
  }
  const Tensor3<T> z = ddim_sample_latent(net, sched, cfg, cond, ctrl_ptr);
  const Tensor3<T> img = codec.decode_normalized(z);
  return rgb_from_tensor(img, /*clip=*/true);
}

}  // namespace tactsynth
