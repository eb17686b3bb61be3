#pragma once

// Manifest-driven training orchestration: loads the aligned corpus, runs the
// codec -> base -> control stages, and reads/writes model checkpoints. The
// base stage trains the text-conditioned objective with the control input
// forced null; the control stage freezes the base and trains only the
// branch, matching the frozen-trunk regime.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/checkpoint.hpp"
#include "tactsynth/dataset.hpp"
#include "tactsynth/diffusion.hpp"
#include "tactsynth/png_io.hpp"

namespace tactsynth {

struct TrainConfig {
  uint64_t seed = 42;
  int threads = 1;
  CodecConfig codec;
  DenoiserConfig denoiser;
  int schedule_T = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  StageConfig codec_stage;
  StageConfig base_stage;
  StageConfig control_stage;
  std::vector<std::string> stages = {"codec", "base", "control"};

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("codec")) c.codec = CodecConfig::from_json(j["codec"]);
    if (j.contains("denoiser"))
      c.denoiser = DenoiserConfig::from_json(j["denoiser"]);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      c.schedule_T = s.value("T", c.schedule_T);
      c.beta_start = s.value("beta_start", c.beta_start);
      c.beta_end = s.value("beta_end", c.beta_end);
    }
    StageConfig defaults;
    if (j.contains("codec_stage"))
      c.codec_stage = StageConfig::from_json(j["codec_stage"], defaults);
    if (j.contains("base_stage"))
      c.base_stage = StageConfig::from_json(j["base_stage"], defaults);
    if (j.contains("control_stage"))
      c.control_stage = StageConfig::from_json(j["control_stage"], defaults);
    if (j.contains("stages"))
      c.stages = j["stages"].get<std::vector<std::string>>();
    // keep the denoiser latent geometry consistent with the codec
    c.denoiser.latent_c = c.codec.latent_c();
    c.denoiser.latent_hw = c.codec.latent_hw();
    return c;
  }

  static TrainConfig from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::IoError, "cannot open config " + path.string());
    nlohmann::json j;
    try {
      f >> j;
    } catch (const std::exception& e) {
      fail(ErrorCode::BadConfig, std::string("config parse: ") + e.what());
    }
    return from_json(j);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["codec"] = codec.to_json();
    j["denoiser"] = denoiser.to_json();
    j["schedule"] = {{"T", schedule_T},
                     {"beta_start", beta_start},
                     {"beta_end", beta_end}};
    j["codec_stage"] = codec_stage.to_json();
    j["base_stage"] = base_stage.to_json();
    j["control_stage"] = control_stage.to_json();
    j["stages"] = stages;
    return j;
  }

  bool has_stage(const std::string& s) const {
    for (const auto& st : stages)
      if (st == s) return true;
    return false;
  }
};

// In-memory corpus item carrying everything a training stage needs.
struct CorpusSample {
  SampleRecord rec;
  ImageRGB target;     // training-size RGB
  ImageF control;      // native-resolution control image
  ConditionEmbedding cond;
};

struct Corpus {
  std::vector<CorpusSample> train, val, test;
};

// Loads targets, control images and prompts referenced by the manifest.
// Paths in the manifest are relative to its directory.
inline Corpus load_corpus(const Manifest& manifest,
                          const std::filesystem::path& manifest_dir,
                          int image_size) {
  Corpus corpus;
  std::map<std::string, ImageF> control_cache;
  for (const auto& rec : manifest.records) {
    if (rec.partition == Partition::Unassigned)
      fail(ErrorCode::BadConfig,
           "manifest has unassigned partitions; run the split first");
    CorpusSample s;
    s.rec = rec;
    ImageRGB target = png::load_rgb8(manifest_dir / rec.target);
    if (target.width != image_size) {
      if (target.width % image_size != 0)
        fail(ErrorCode::DimensionMismatch,
             "target resolution incompatible with image_size");
      // area-average each channel down to the training size
      const int f = target.width / image_size;
      ImageRGB small(image_size, image_size);
      const float inv = 1.0f / (f * f);
      for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x)
          for (int c = 0; c < 3; ++c) {
            float acc = 0;
            for (int dy = 0; dy < f; ++dy)
              for (int dx = 0; dx < f; ++dx)
                acc += target.at(x * f + dx, y * f + dy, c);
            small.at(x, y, c) = acc * inv;
          }
      target = std::move(small);
    }
    s.target = std::move(target);
    auto it = control_cache.find(rec.control_image);
    if (it == control_cache.end())
      it = control_cache
               .emplace(rec.control_image,
                        png::load_gray16(manifest_dir / rec.control_image))
               .first;
    s.control = it->second;
    std::ifstream pf(manifest_dir / rec.prompt);
    if (!pf) fail(ErrorCode::IoError, "cannot open prompt " + rec.prompt);
    const std::string text((std::istreambuf_iterator<char>(pf)),
                           std::istreambuf_iterator<char>());
    s.cond = embed_prompt(parse_prompt(text));
    switch (rec.partition) {
      case Partition::Train: corpus.train.push_back(std::move(s)); break;
      case Partition::Val: corpus.val.push_back(std::move(s)); break;
      case Partition::Test: corpus.test.push_back(std::move(s)); break;
      case Partition::Unassigned: break;
    }
  }
  return corpus;
}

template <typename T>
struct Model {
  TrainConfig config;
  LatentCodec<T> codec;
  Denoiser<T> denoiser;
  NoiseSchedule schedule;

  explicit Model(const TrainConfig& cfg)
      : config(cfg),
        codec(cfg.codec),
        denoiser(cfg.denoiser),
        schedule(NoiseSchedule::linear(cfg.schedule_T, cfg.beta_start,
                                       cfg.beta_end)) {}
};

template <typename T>
inline std::vector<TrainItem<T>> make_train_items(
    const Model<T>& model, const std::vector<CorpusSample>& samples) {
  std::vector<TrainItem<T>> items;
  items.reserve(samples.size());
  for (const auto& s : samples) {
    TrainItem<T> it;
    it.z0 = model.codec.encode_normalized(tensor_from_rgb<T>(s.target));
    it.cond.assign(s.cond.v.begin(), s.cond.v.end());
    it.control = tensor_from_gray<T>(
        downsample_to(s.control, model.config.denoiser.latent_hw));
    items.push_back(std::move(it));
  }
  return items;
}

inline void write_loss_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, LossRow>>& rows) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot write loss csv " + path.string());
  f << "stage,step,train_loss,val_loss\n";
  for (const auto& [stage, row] : rows) {
    char buf[160];
    if (std::isnan(row.val_loss))
      std::snprintf(buf, sizeof(buf), "%s,%lld,%.8g,\n", stage.c_str(),
                    static_cast<long long>(row.step), row.train_loss);
    else
      std::snprintf(buf, sizeof(buf), "%s,%lld,%.8g,%.8g\n", stage.c_str(),
                    static_cast<long long>(row.step), row.train_loss,
                    row.val_loss);
    f << buf;
  }
}

template <typename T>
inline void save_model(const Model<T>& model,
                       const std::filesystem::path& path,
                       const nlohmann::ordered_json& extra_meta = {},
                       bool reproducible = false) {
  Checkpoint ck;
  store_to_checkpoint(model.codec.store, "codec.", ck);
  {
    CheckpointTensor mean, sd;
    mean.name = "codec.latent_mean";
    sd.name = "codec.latent_std";
    mean.shape = {static_cast<uint32_t>(model.codec.latent_mean.size())};
    sd.shape = {static_cast<uint32_t>(model.codec.latent_std.size())};
    for (auto v : model.codec.latent_mean)
      mean.data.push_back(static_cast<float>(v));
    for (auto v : model.codec.latent_std)
      sd.data.push_back(static_cast<float>(v));
    ck.tensors.push_back(std::move(mean));
    ck.tensors.push_back(std::move(sd));
  }
  store_to_checkpoint(model.denoiser.base, "base.", ck);
  if (model.denoiser.has_control)
    store_to_checkpoint(model.denoiser.ctrl, "ctrl.", ck);
  ck.meta["schema_version"] = Checkpoint::kVersion;
  ck.meta["config"] = model.config.to_json();
  ck.meta["has_control"] = model.denoiser.has_control;
  if (!extra_meta.is_null())
    for (const auto& [k, v] : extra_meta.items()) ck.meta[k] = v;
  if (!reproducible) {
    ck.meta["created_unix"] =
        static_cast<int64_t>(std::time(nullptr));
  }
  ck.save(path);
}

template <typename T>
inline Model<T> load_model(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (!ck.meta.contains("config"))
    fail(ErrorCode::BadCheckpoint, "checkpoint lacks config metadata");
  TrainConfig cfg = TrainConfig::from_json(ck.meta["config"]);
  Model<T> model(cfg);
  store_from_checkpoint(model.codec.store, "codec.", ck);
  const auto* mean = ck.find("codec.latent_mean");
  const auto* sd = ck.find("codec.latent_std");
  if (!mean || !sd)
    fail(ErrorCode::BadCheckpoint, "checkpoint lacks latent statistics");
  model.codec.latent_mean.assign(mean->data.begin(), mean->data.end());
  model.codec.latent_std.assign(sd->data.begin(), sd->data.end());
  store_from_checkpoint(model.denoiser.base, "base.", ck);
  if (ck.meta.value("has_control", false)) {
    Rng dummy(0);
    model.denoiser.add_control_branch(dummy, /*copy_from_base=*/false);
    store_from_checkpoint(model.denoiser.ctrl, "ctrl.", ck);
  }
  return model;
}

struct TrainOutcome {
  std::vector<std::pair<std::string, LossRow>> loss_rows;
  double codec_corpus_mse = std::numeric_limits<double>::quiet_NaN();
  bool codec_met_target = true;
};

// Runs the configured stages in order on an already-loaded corpus.
template <typename T>
inline TrainOutcome run_training(Model<T>& model, const Corpus& corpus) {
  const TrainConfig& cfg = model.config;
  TrainOutcome out;

  std::vector<Tensor3<T>> train_images;
  train_images.reserve(corpus.train.size());
  for (const auto& s : corpus.train)
    train_images.push_back(tensor_from_rgb<T>(s.target));

  if (cfg.has_stage("codec") && cfg.codec.type == "conv") {
    Rng rng(cfg.seed, "init-codec");
    model.codec.init_weights(rng);
    CodecTrainer<T> trainer(model.codec, cfg.codec_stage, cfg.seed,
                            cfg.threads);
    for (const auto& row : trainer.run(train_images))
      out.loss_rows.emplace_back("codec", row);
    out.codec_corpus_mse = trainer.corpus_mse(train_images);
    out.codec_met_target = out.codec_corpus_mse <= cfg.codec.target_mse;
  }
  model.codec.fit_latent_stats(train_images);

  const std::vector<TrainItem<T>> train_items =
      make_train_items(model, corpus.train);
  const std::vector<TrainItem<T>> val_items =
      make_train_items(model, corpus.val);

  if (cfg.has_stage("base")) {
    Rng rng(cfg.seed, "init-base");
    model.denoiser.init_weights(rng);
    DiffusionTrainer<T> trainer(model.denoiser, model.schedule,
                                cfg.base_stage, /*train_base=*/true,
                                /*train_ctrl=*/false, cfg.seed, cfg.threads);
    for (const auto& row : trainer.run(train_items, val_items))
      out.loss_rows.emplace_back("base", row);
  }

  if (cfg.has_stage("control")) {
    if (!model.denoiser.has_control) {
      Rng rng(cfg.seed, "init-control");
      model.denoiser.add_control_branch(rng);
    }
    DiffusionTrainer<T> trainer(model.denoiser, model.schedule,
                                cfg.control_stage, /*train_base=*/false,
                                /*train_ctrl=*/true, cfg.seed, cfg.threads);
    for (const auto& row : trainer.run(train_items, val_items))
      out.loss_rows.emplace_back("control", row);
  }
  return out;
}

}  // namespace tactsynth
