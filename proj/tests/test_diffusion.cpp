#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "tactsynth/checkpoint.hpp"
#include "tactsynth/diffusion.hpp"
#include "tactsynth/trainer.hpp"
#include "test_util.hpp"

using namespace tactsynth;

namespace {

template <typename T>
Tensor3<T> random_tensor(int c, int h, int w, Rng& rng, double scale = 1.0) {
  Tensor3<T> t(c, h, w);
  for (auto& v : t.v) v = static_cast<T>(rng.normal() * scale);
  return t;
}

DenoiserConfig tiny_denoiser_config() {
  DenoiserConfig cfg;
  cfg.latent_c = 2;
  cfg.latent_hw = 8;
  cfg.base_channels = 6;
  cfg.emb_dim = 12;
  cfg.time_dim = 8;
  return cfg;
}

// Eq-style training loss for one item in double precision, as a pure
// function of the parameter stores; reference for finite differences.
double loss_of(Denoiser<double>& net, const Tensor3<double>& z0, int t,
               const Tensor3<double>& eps, const std::vector<double>& cond,
               const Tensor3<double>* ctrl, const NoiseSchedule& sched) {
  const Tensor3<double> z_t = forward_noise(z0, t, eps, sched);
  Denoiser<double>::Workspace ws;
  const Tensor3<double>& eps_hat =
      net.forward(z_t, t, cond.empty() ? nullptr : cond.data(), ctrl, ws);
  double loss = 0.0;
  for (size_t i = 0; i < eps_hat.size(); ++i) {
    const double d = eps_hat.v[i] - eps.v[i];
    loss += d * d;
  }
  return loss / static_cast<double>(eps_hat.size());
}

}  // namespace

TEST_CASE("linear schedule satisfies its invariants") {
  const NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4, 2e-2);
  REQUIRE(s.T == 1000);
  CHECK(s.alpha_bar[0] == 1.0);
  CHECK(s.beta[1] == Catch::Approx(1e-4));
  CHECK(s.beta[1000] == Catch::Approx(2e-2));
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.beta[t] > 0.0);
    CHECK(s.beta[t] < 1.0);
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  }
  CHECK_THROWS_AS(NoiseSchedule::linear(100, 0.5, 0.1), Error);
}

TEST_CASE("forward noising boundary cases") {
  const NoiseSchedule s = NoiseSchedule::linear(100);
  Rng rng(1);
  const auto z0 = random_tensor<float>(2, 4, 4, rng);
  const auto eps = random_tensor<float>(2, 4, 4, rng);

  SECTION("t = 0 returns z0 exactly") {
    const auto z = forward_noise(z0, 0, eps, s);
    for (size_t i = 0; i < z.size(); ++i) REQUIRE(z.v[i] == z0.v[i]);
  }
  SECTION("z0 = 0 gives scaled noise") {
    Tensor3<float> zero(2, 4, 4);
    const auto z = forward_noise(zero, 50, eps, s);
    const float b = static_cast<float>(s.sqrt_one_minus_alpha_bar(50));
    for (size_t i = 0; i < z.size(); ++i)
      REQUIRE(z.v[i] == Catch::Approx(b * eps.v[i]));
  }
  SECTION("shape mismatch is rejected") {
    Tensor3<float> wrong(1, 4, 4);
    CHECK_THROWS_AS(forward_noise(z0, 10, wrong, s), Error);
  }
}

TEST_CASE("forward noising matches closed-form variance by Monte Carlo") {
  const NoiseSchedule s = NoiseSchedule::linear(1000);
  Rng rng(42);
  const double var_z0 = 4.0;  // z0 ~ N(0, 2^2)
  for (int t : {250, 500, 1000}) {
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double z0 = 2.0 * rng.normal();
      const double z = forward_noise_scalar(z0, t, rng.normal(), s);
      sum += z;
      sq += z * z;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    const double expected = s.alpha_bar[t] * var_z0 + (1.0 - s.alpha_bar[t]);
    CHECK(std::abs(var - expected) < 0.02 * expected);
  }
}

TEST_CASE("cfg_fuse satisfies the algebraic identities exactly") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto u = random_tensor<float>(3, 5, 4, rng);
    const auto c = random_tensor<float>(3, 5, 4, rng);
    const auto w1 = cfg_fuse(u, c, 1.0);
    const auto w0 = cfg_fuse(u, c, 0.0);
    const auto eq = cfg_fuse(u, u, rng.uniform(0, 8));
    for (size_t i = 0; i < u.size(); ++i) {
      REQUIRE(w1.v[i] == c.v[i]);
      REQUIRE(w0.v[i] == u.v[i]);
      REQUIRE(eq.v[i] == u.v[i]);
    }
  }
}

TEST_CASE("denoiser output has the latent shape and is deterministic") {
  const DenoiserConfig cfg = tiny_denoiser_config();
  Denoiser<float> net(cfg);
  Rng rng(11);
  net.init_weights(rng);
  const auto z = random_tensor<float>(cfg.latent_c, cfg.latent_hw,
                                      cfg.latent_hw, rng);
  const ConditionEmbedding cond =
      embed_prompt(make_prompt(SensorModality::ViTac, {1, 2, 0.5, 30},
                               PromptSchema::Short));
  for (int t : {1, 500, 1000}) {
    const auto eps = denoise(net, z, t, &cond, nullptr);
    REQUIRE(eps.c == cfg.latent_c);
    REQUIRE(eps.h == cfg.latent_hw);
    REQUIRE(eps.w == cfg.latent_hw);
    const auto again = denoise(net, z, t, &cond, nullptr);
    CHECK(std::memcmp(eps.v.data(), again.v.data(),
                      eps.v.size() * sizeof(float)) == 0);
  }
  Tensor3<float> wrong(cfg.latent_c, cfg.latent_hw / 2, cfg.latent_hw);
  CHECK_THROWS_AS(denoise(net, wrong, 10, &cond, nullptr), Error);
}

TEST_CASE("zero-initialized control branch is exactly neutral") {
  const DenoiserConfig cfg = tiny_denoiser_config();
  Denoiser<float> net(cfg);
  Rng rng(13);
  net.init_weights(rng);
  const auto baseline_params = net.base.data;

  Rng rng2(14);
  net.add_control_branch(rng2, /*copy_from_base=*/true);
  CHECK(net.base.data == baseline_params);

  const auto z = random_tensor<float>(cfg.latent_c, cfg.latent_hw,
                                      cfg.latent_hw, rng);
  Tensor3<float> ctrl(1, cfg.latent_hw, cfg.latent_hw);
  for (auto& v : ctrl.v) v = static_cast<float>(rng.uniform());
  const ConditionEmbedding cond = embed_prompt(
      make_prompt(SensorModality::TacTip, {}, PromptSchema::Short));

  for (int t : {1, 250, 1000}) {
    const auto with_ctrl = denoise(net, z, t, &cond, &ctrl);
    const auto without = denoise(net, z, t, &cond, nullptr);
    REQUIRE(std::memcmp(with_ctrl.v.data(), without.v.data(),
                        with_ctrl.v.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("every zero-projection weight and bias starts at exactly zero") {
  Denoiser<float> net(tiny_denoiser_config());
  Rng rng(3);
  net.init_weights(rng);
  net.add_control_branch(rng);
  bool saw_zero_entry = false;
  for (const auto& e : net.ctrl.entries) {
    if (e.name.find(".zero.") == std::string::npos) continue;
    saw_zero_entry = true;
    for (size_t i = 0; i < e.count(); ++i)
      REQUIRE(net.ctrl.data[e.offset + i] == 0.0f);
  }
  CHECK(saw_zero_entry);
}

TEST_CASE("backprop matches central finite differences per layer class") {
  // 64-bit network; perturb >= 10 parameters in every layer class and
  // compare the analytic gradient against (L(w+h) - L(w-h)) / 2h.
  DenoiserConfig cfg = tiny_denoiser_config();
  Denoiser<double> net(cfg);
  Rng rng(21);
  net.init_weights(rng);
  net.add_control_branch(rng);
  // randomize the zero-initialized layers so their gradients are informative
  for (auto* store : {&net.base, &net.ctrl})
    for (const auto& e : store->entries)
      if (e.name.find(".zero.") != std::string::npos)
        for (size_t i = 0; i < e.count(); ++i)
          store->data[e.offset + i] = rng.normal() * 0.05;

  const NoiseSchedule sched = NoiseSchedule::linear(100);
  const auto z0 = random_tensor<double>(cfg.latent_c, cfg.latent_hw,
                                        cfg.latent_hw, rng);
  const auto eps = random_tensor<double>(cfg.latent_c, cfg.latent_hw,
                                         cfg.latent_hw, rng);
  Tensor3<double> ctrl(1, cfg.latent_hw, cfg.latent_hw);
  for (auto& v : ctrl.v) v = rng.uniform();
  const std::vector<double> cond = {0, 1, 0, 0.3, -0.2, 0.5, 0.1, 0};
  const int t = 37;

  // analytic gradients
  net.base.zero_grad();
  net.ctrl.zero_grad();
  {
    const Tensor3<double> z_t = forward_noise(z0, t, eps, sched);
    Denoiser<double>::Workspace ws;
    const Tensor3<double>& eps_hat =
        net.forward(z_t, t, cond.data(), &ctrl, ws);
    Tensor3<double> deps(eps_hat.c, eps_hat.h, eps_hat.w);
    const double n = static_cast<double>(eps_hat.size());
    for (size_t i = 0; i < eps_hat.size(); ++i)
      deps.v[i] = 2.0 * (eps_hat.v[i] - eps.v[i]) / n;
    net.backward(deps, ws, net.base.grad.data(), net.ctrl.grad.data());
  }

  auto check_store = [&](ParamStore<double>& store, const char* which) {
    for (const auto& e : store.entries) {
      Rng pick(substream_seed(777, e.name));
      const size_t trials = std::min<size_t>(10, e.count());
      for (size_t k = 0; k < trials; ++k) {
        const size_t idx = e.offset + pick.below(e.count());
        const double save = store.data[idx];
        const double h = 1e-5 * std::max(1.0, std::abs(save));
        store.data[idx] = save + h;
        const double lp = loss_of(net, z0, t, eps, cond, &ctrl, sched);
        store.data[idx] = save - h;
        const double lm = loss_of(net, z0, t, eps, cond, &ctrl, sched);
        store.data[idx] = save;
        const double fd = (lp - lm) / (2.0 * h);
        const double bp = store.grad[idx];
        const double denom = std::max({std::abs(fd), std::abs(bp), 1e-8});
        INFO(which << " " << e.name << "[" << idx - e.offset << "]: fd=" << fd
                   << " bp=" << bp);
        REQUIRE(std::abs(fd - bp) / denom < 1e-4);
      }
    }
  };
  check_store(net.base, "base");
  check_store(net.ctrl, "ctrl");
}

TEST_CASE("codec gradients match finite differences") {
  CodecConfig cc;
  cc.image_size = 8;
  cc.channels1 = 4;
  cc.channels2 = 6;
  cc.latent_channels = 2;
  LatentCodec<double> codec(cc);
  Rng rng(31);
  codec.init_weights(rng);
  Tensor3<double> img = random_tensor<double>(3, 8, 8, rng, 0.3);
  for (auto& v : img.v) v = std::abs(v);

  auto loss_fn = [&]() {
    const Tensor3<double> recon = codec.decode(codec.encode(img));
    double loss = 0;
    for (size_t i = 0; i < img.size(); ++i) {
      const double d = recon.v[i] - img.v[i];
      loss += d * d;
    }
    return loss / static_cast<double>(img.size());
  };

  codec.store.zero_grad();
  {
    typename LatentCodec<double>::Cache cache;
    const Tensor3<double>& recon = codec.forward(img, cache);
    Tensor3<double> drecon(recon.c, recon.h, recon.w);
    for (size_t i = 0; i < recon.size(); ++i)
      drecon.v[i] =
          2.0 * (recon.v[i] - img.v[i]) / static_cast<double>(recon.size());
    codec.backward(cache, drecon, codec.store.grad.data());
  }
  for (const auto& e : codec.store.entries) {
    Rng pick(substream_seed(888, e.name));
    const size_t trials = std::min<size_t>(10, e.count());
    for (size_t k = 0; k < trials; ++k) {
      const size_t idx = e.offset + pick.below(e.count());
      const double save = codec.store.data[idx];
      const double h = 1e-5 * std::max(1.0, std::abs(save));
      codec.store.data[idx] = save + h;
      const double lp = loss_fn();
      codec.store.data[idx] = save - h;
      const double lm = loss_fn();
      codec.store.data[idx] = save;
      const double fd = (lp - lm) / (2.0 * h);
      const double bp = codec.store.grad[idx];
      const double denom = std::max({std::abs(fd), std::abs(bp), 1e-8});
      INFO(e.name);
      REQUIRE(std::abs(fd - bp) / denom < 1e-4);
    }
  }
}

TEST_CASE("identical training steps with identical RNG produce equal losses") {
  const DenoiserConfig cfg = tiny_denoiser_config();
  const NoiseSchedule sched = NoiseSchedule::linear(100);
  std::vector<TrainItem<float>> items;
  Rng rng(5);
  for (int i = 0; i < 6; ++i) {
    TrainItem<float> it;
    it.z0 = random_tensor<float>(cfg.latent_c, cfg.latent_hw, cfg.latent_hw,
                                 rng);
    it.cond = {1, 0, 0, 0.1, 0.2, -0.3, 0, 0};
    it.control = Tensor3<float>(1, cfg.latent_hw, cfg.latent_hw, 0.2f);
    items.push_back(std::move(it));
  }
  StageConfig sc;
  sc.steps = 3;
  sc.batch_size = 4;
  sc.lr = 1e-3;

  auto run_once = [&](int threads) {
    Denoiser<float> net(cfg);
    Rng ir(77);
    net.init_weights(ir);
    DiffusionTrainer<float> tr(net, sched, sc, true, false, 123, threads);
    std::vector<double> losses;
    for (int s = 1; s <= 3; ++s) losses.push_back(tr.step(items, s));
    return std::pair(losses, net.base.data);
  };
  const auto [l1, p1] = run_once(1);
  const auto [l2, p2] = run_once(1);
  CHECK(l1 == l2);
  CHECK(p1 == p2);
  // thread count must not change results
  const auto [l4, p4] = run_once(4);
  CHECK(l1 == l4);
  CHECK(p1 == p4);
}

TEST_CASE("loss starts near 1 and decreases on a constant corpus") {
  const DenoiserConfig cfg = tiny_denoiser_config();
  const NoiseSchedule sched = NoiseSchedule::linear(100);
  std::vector<TrainItem<float>> items(1);
  items[0].z0 = Tensor3<float>(cfg.latent_c, cfg.latent_hw, cfg.latent_hw,
                               0.5f);
  items[0].cond = {0, 1, 0, 0, 0, 0, 0, 0};
  items[0].control = Tensor3<float>(1, cfg.latent_hw, cfg.latent_hw);

  Denoiser<float> net(cfg);
  Rng ir(99);
  net.init_weights(ir);
  StageConfig sc;
  sc.steps = 80;
  sc.batch_size = 4;
  sc.lr = 3e-3;
  DiffusionTrainer<float> tr(net, sched, sc, true, false, 7, 1);
  std::vector<double> losses;
  for (int s = 1; s <= sc.steps; ++s) losses.push_back(tr.step(items, s));

  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += losses[i];
    last += losses[losses.size() - 10 + i];
  }
  CHECK(first / 10 > 0.5);
  CHECK(first / 10 < 2.0);
  CHECK(last < first);
}

TEST_CASE("base-only objective trains without a control branch") {
  const DenoiserConfig cfg = tiny_denoiser_config();
  const NoiseSchedule sched = NoiseSchedule::linear(50);
  std::vector<TrainItem<float>> items(2);
  Rng rng(15);
  for (auto& it : items) {
    it.z0 = random_tensor<float>(cfg.latent_c, cfg.latent_hw, cfg.latent_hw,
                                 rng);
    it.cond = {0, 0, 1, 0, 0, 0, 0, 0};
  }
  Denoiser<float> net(cfg);
  net.init_weights(rng);
  StageConfig sc;
  sc.steps = 5;
  sc.batch_size = 2;
  DiffusionTrainer<float> tr(net, sched, sc, true, false, 1, 1);
  for (int s = 1; s <= 5; ++s) CHECK(std::isfinite(tr.step(items, s)));
}

TEST_CASE("frozen base stays bit-identical during control training") {
  const DenoiserConfig cfg = tiny_denoiser_config();
  const NoiseSchedule sched = NoiseSchedule::linear(50);
  std::vector<TrainItem<float>> items(3);
  Rng rng(25);
  for (auto& it : items) {
    it.z0 = random_tensor<float>(cfg.latent_c, cfg.latent_hw, cfg.latent_hw,
                                 rng);
    it.cond = {1, 0, 0, 0, 0, 0, 0, 0};
    it.control = random_tensor<float>(1, cfg.latent_hw, cfg.latent_hw, rng,
                                      0.3);
  }
  Denoiser<float> net(cfg);
  net.init_weights(rng);
  // emulate a trained base: the output head must be non-zero for gradients
  // to reach the branch
  for (const auto& e : net.base.entries)
    if (e.name.find(".zero.") != std::string::npos)
      for (size_t i = 0; i < e.count(); ++i)
        net.base.data[e.offset + i] = static_cast<float>(rng.normal() * 0.05);
  net.add_control_branch(rng);
  const auto base_before = net.base.data;
  const auto ctrl_before = net.ctrl.data;
  StageConfig sc;
  sc.steps = 4;
  sc.batch_size = 3;
  sc.lr = 1e-3;
  sc.cond_dropout = 0.25;
  DiffusionTrainer<float> tr(net, sched, sc, false, true, 3, 1);
  for (int s = 1; s <= 4; ++s) tr.step(items, s);
  CHECK(net.base.data == base_before);
  CHECK(net.ctrl.data != ctrl_before);
}

TEST_CASE("ddim sampling is seed-deterministic and respects striding") {
  TrainConfig tc;
  tc.codec.image_size = 16;
  tc.codec.type = "conv";
  tc.denoiser.base_channels = 6;
  tc.denoiser.emb_dim = 12;
  tc.denoiser.time_dim = 8;
  tc.schedule_T = 40;
  tc.denoiser.latent_c = tc.codec.latent_c();
  tc.denoiser.latent_hw = tc.codec.latent_hw();
  Model<float> model(tc);
  Rng rng(55);
  model.codec.init_weights(rng);
  model.denoiser.init_weights(rng);
  model.denoiser.add_control_branch(rng);

  const ConditionEmbedding cond = embed_prompt(
      make_prompt(SensorModality::ViTacTip, {1, -1, 0.2, 10},
                  PromptSchema::Short));
  ImageF ctrl_img(16, 16, 0.0f);
  for (int y = 4; y < 10; ++y)
    for (int x = 4; x < 10; ++x) ctrl_img.at(x, y) = 0.7f;

  SamplerConfig sc;
  sc.steps = 10;
  sc.cfg_weight = 3.0;
  sc.seed = 2024;

  const ImageRGB a = ddim_sample(model.denoiser, model.codec, model.schedule,
                                 sc, &cond, &ctrl_img);
  const ImageRGB b = ddim_sample(model.denoiser, model.codec, model.schedule,
                                 sc, &cond, &ctrl_img);
  REQUIRE(a.v == b.v);

  SECTION("uneven striding is rejected") {
    SamplerConfig bad = sc;
    bad.steps = 7;
    CHECK_THROWS_AS(ddim_sample(model.denoiser, model.codec, model.schedule,
                                bad, &cond, &ctrl_img),
                    Error);
  }

  SECTION("outputs stay in [0,1]") {
    for (float v : a.v) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }

  SECTION("fresh zero-init branch: control image cannot change the sample") {
    const ImageRGB with = ddim_sample(model.denoiser, model.codec,
                                      model.schedule, sc, &cond, &ctrl_img);
    const ImageRGB without = ddim_sample(model.denoiser, model.codec,
                                         model.schedule, sc, &cond, nullptr);
    REQUIRE(with.v == without.v);
  }
}

TEST_CASE("checkpoints round-trip the full model bit-exactly") {
  testutil::TempDir tmp("ckpt");
  TrainConfig tc;
  tc.codec.image_size = 16;
  tc.denoiser.base_channels = 6;
  tc.denoiser.emb_dim = 12;
  tc.denoiser.time_dim = 8;
  tc.schedule_T = 40;
  tc.denoiser.latent_c = tc.codec.latent_c();
  tc.denoiser.latent_hw = tc.codec.latent_hw();
  Model<float> model(tc);
  Rng rng(66);
  model.codec.init_weights(rng);
  model.denoiser.init_weights(rng);
  model.denoiser.add_control_branch(rng);
  model.codec.latent_mean = {0.1f, -0.2f, 0.3f, 0.05f};
  model.codec.latent_std = {1.1f, 0.9f, 1.3f, 0.7f};

  const auto path = tmp.path / "model.ckpt";
  nlohmann::ordered_json extra;
  extra["stage"] = "control";
  extra["step"] = 123;
  save_model(model, path, extra, /*reproducible=*/true);

  const Model<float> back = load_model<float>(path);
  CHECK(back.codec.store.data == model.codec.store.data);
  CHECK(back.denoiser.base.data == model.denoiser.base.data);
  CHECK(back.denoiser.ctrl.data == model.denoiser.ctrl.data);
  CHECK(back.codec.latent_mean == model.codec.latent_mean);
  CHECK(back.codec.latent_std == model.codec.latent_std);
  CHECK(back.denoiser.has_control);
  CHECK(back.schedule.T == 40);

  // reproducible mode yields byte-identical files
  const auto path2 = tmp.path / "model2.ckpt";
  save_model(model, path2, extra, /*reproducible=*/true);
  CHECK(png::read_file(path) == png::read_file(path2));

  SECTION("corrupt magic is rejected") {
    auto bytes = png::read_file(path);
    bytes[0] = 'X';
    const auto bad = tmp.path / "bad.ckpt";
    png::write_file(bad, bytes);
    CHECK_THROWS_AS(Checkpoint::load(bad), Error);
  }
}
