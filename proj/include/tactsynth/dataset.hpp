#pragma once

// Aligned multi-modal corpus: sample manifests, the stratified
// (object, frame)-level split, alignment verification, and the procedural
// per-modality target synthesizer that stands in for real sensor images at
// desk scale.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/common.hpp"
#include "tactsynth/control.hpp"
#include "tactsynth/geometry.hpp"
#include "tactsynth/image.hpp"
#include "tactsynth/rng.hpp"

namespace tactsynth {

enum class Partition { Unassigned, Train, Val, Test };

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::Unassigned: return "unassigned";
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "?";
}

inline Partition partition_from_name(const std::string& s) {
  if (s == "unassigned") return Partition::Unassigned;
  if (s == "train") return Partition::Train;
  if (s == "val") return Partition::Val;
  if (s == "test") return Partition::Test;
  fail(ErrorCode::BadConfig, "unknown partition '" + s + "'");
}

struct SampleRecord {
  std::string object_id;
  int64_t frame = 0;
  ContactPose pose;
  SensorModality modality = SensorModality::TacTip;
  std::string control_image;  // paths relative to the manifest file
  std::string prompt;
  std::string target;
  Partition partition = Partition::Unassigned;
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 ||
        std::abs(train + val + test - 1.0) > 1e-9)
      fail(ErrorCode::BadConfig, "split ratios must be >= 0 and sum to 1");
  }
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::vector<std::string> objects;
  SplitRatios ratios;
  uint64_t seed = 0;
  bool split_applied = false;
};

using SampleKey = std::pair<std::string, int64_t>;  // (object_id, frame)

// ---------------------------------------------------------------------------
// Manifest JSONL I/O. Line 1 is a meta record, the rest are samples.

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot write manifest " + path.string());
  nlohmann::ordered_json meta;
  meta["type"] = "meta";
  meta["objects"] = m.objects;
  std::map<std::string, size_t> counts;
  for (const auto& r : m.records) counts[modality_name(r.modality)]++;
  meta["counts_per_modality"] = counts;
  meta["split_ratios"] = {m.ratios.train, m.ratios.val, m.ratios.test};
  meta["seed"] = m.seed;
  meta["split_applied"] = m.split_applied;
  f << meta.dump() << "\n";
  for (const auto& r : m.records) {
    nlohmann::ordered_json j;
    j["type"] = "sample";
    j["object_id"] = r.object_id;
    j["frame"] = r.frame;
    j["pose"] = detail::pose_to_json(r.pose);
    j["modality"] = modality_name(r.modality);
    j["control_image"] = r.control_image;
    j["prompt"] = r.prompt;
    j["target"] = r.target;
    j["partition"] = partition_name(r.partition);
    f << j.dump() << "\n";
  }
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail(ErrorCode::BadConfig, "manifest line " + std::to_string(line_no) +
                                     ": " + e.what());
    }
    const std::string type = j.value("type", "sample");
    if (type == "meta") {
      m.objects = j.value("objects", std::vector<std::string>{});
      if (j.contains("split_ratios") && j["split_ratios"].is_array() &&
          j["split_ratios"].size() == 3) {
        m.ratios.train = j["split_ratios"][0].get<double>();
        m.ratios.val = j["split_ratios"][1].get<double>();
        m.ratios.test = j["split_ratios"][2].get<double>();
      }
      m.seed = j.value("seed", 0ull);
      m.split_applied = j.value("split_applied", false);
      continue;
    }
    SampleRecord r;
    r.object_id = j.at("object_id").get<std::string>();
    r.frame = j.at("frame").get<int64_t>();
    r.pose = detail::pose_from_json(j.at("pose"));
    r.modality = modality_from_name(j.at("modality").get<std::string>());
    r.control_image = j.value("control_image", "");
    r.prompt = j.value("prompt", "");
    r.target = j.value("target", "");
    r.partition = partition_from_name(j.value("partition", "unassigned"));
    m.records.push_back(r);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Alignment verification

struct AlignmentViolation {
  SampleKey key;
  std::string kind;  // incomplete | duplicate | pose-mismatch | partition-mismatch
  std::string detail;
};

struct AlignmentReport {
  std::vector<AlignmentViolation> violations;

  bool aligned() const { return violations.empty(); }
};

inline AlignmentReport verify_alignment(const Manifest& m) {
  AlignmentReport report;
  std::map<SampleKey, std::vector<const SampleRecord*>> by_key;
  for (const auto& r : m.records)
    by_key[{r.object_id, r.frame}].push_back(&r);
  for (const auto& [key, recs] : by_key) {
    int count[3] = {0, 0, 0};
    for (const auto* r : recs) count[static_cast<int>(r->modality)]++;
    bool dup = false;
    for (int c : count)
      if (c > 1) dup = true;
    if (dup) {
      report.violations.push_back({key, "duplicate",
                                   "modality appears more than once"});
      continue;
    }
    if (recs.size() != 3) {
      std::string missing;
      for (SensorModality mod : kAllModalities)
        if (count[static_cast<int>(mod)] == 0)
          missing += std::string(missing.empty() ? "" : ",") +
                     modality_name(mod);
      report.violations.push_back({key, "incomplete",
                                   "missing modalities: " + missing});
      continue;
    }
    const ContactPose& p0 = recs[0]->pose;
    for (size_t i = 1; i < recs.size(); ++i) {
      const ContactPose& p = recs[i]->pose;
      if (p.x != p0.x || p.y != p0.y || p.z != p0.z || p.yaw != p0.yaw) {
        report.violations.push_back({key, "pose-mismatch",
                                     "modalities disagree on pose"});
        break;
      }
    }
    for (size_t i = 1; i < recs.size(); ++i) {
      if (recs[i]->partition != recs[0]->partition) {
        report.violations.push_back({key, "partition-mismatch",
                                     "modalities disagree on partition"});
        break;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Stratified aligned split

// Largest-remainder apportionment of n keys to the three partitions.
inline std::array<size_t, 3> apportion(size_t n, const SplitRatios& ratios) {
  const double want[3] = {ratios.train * n, ratios.val * n, ratios.test * n};
  std::array<size_t, 3> counts{};
  double frac[3];
  size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    counts[i] = static_cast<size_t>(std::floor(want[i]));
    frac[i] = want[i] - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  size_t remainder = n - assigned;
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frac[a] > frac[b]; });
  for (size_t r = 0; r < remainder; ++r) counts[order[r % 3]]++;
  return counts;
}

// Splits over (object, frame) keys, stratified per object, deterministic in
// the seed. All modality records of a key share the resulting partition.
inline Manifest stratified_split(const Manifest& input,
                                 const SplitRatios& ratios, uint64_t seed) {
  ratios.validate();
  const AlignmentReport align = verify_alignment(input);
  if (!align.aligned()) {
    std::string keys;
    for (size_t i = 0; i < align.violations.size() && i < 8; ++i)
      keys += (i ? ", " : "") + align.violations[i].key.first + "#" +
              std::to_string(align.violations[i].key.second);
    fail(ErrorCode::UnalignedManifest,
         "manifest not aligned; offending keys: " + keys);
  }

  std::map<std::string, std::vector<int64_t>> keys_per_object;
  for (const auto& r : input.records) {
    auto& frames = keys_per_object[r.object_id];
    if (std::find(frames.begin(), frames.end(), r.frame) == frames.end())
      frames.push_back(r.frame);
  }

  std::map<SampleKey, Partition> assignment;
  Rng rng(seed, "split");
  for (auto& [object, frames] : keys_per_object) {
    std::sort(frames.begin(), frames.end());
    // Fisher-Yates with the split substream
    for (size_t i = frames.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng.below(i));
      std::swap(frames[i - 1], frames[j]);
    }
    const auto counts = apportion(frames.size(), ratios);
    size_t at = 0;
    for (int part = 0; part < 3; ++part) {
      const Partition p = part == 0   ? Partition::Train
                          : part == 1 ? Partition::Val
                                      : Partition::Test;
      for (size_t k = 0; k < counts[part]; ++k, ++at)
        assignment[{object, frames[at]}] = p;
    }
  }

  Manifest out = input;
  out.ratios = ratios;
  out.seed = seed;
  out.split_applied = true;
  for (auto& r : out.records)
    r.partition = assignment.at({r.object_id, r.frame});
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic per-modality targets

struct SynthStyleParams {
  int target_size = 64;
  // TacTip: marker lattice on a flat background
  double tactip_background = 0.08;
  double tactip_dot_value = 0.95;
  double lattice_pitch_px = 7.0;
  double dot_radius_px = 1.8;
  double marker_disp_gain_px = 4.0;
  // ViTac: depth-gradient pseudo-shading, no markers
  double vitac_base_r = 0.42;
  double vitac_base_g = 0.50;
  double vitac_base_b = 0.62;
  double shade_gain = 1.4;
  double depth_brightness = 0.22;
  double light_dir_x = 0.70710678;
  double light_dir_y = -0.70710678;
  // ViTacTip: ViTac shading plus an additive marker layer. ViTac values are
  // capped at 1 - marker_amplitude so the composite never clips and
  // ViTacTip - ViTac is exactly the marker layer.
  double marker_amplitude = 0.25;
};

inline SynthStyleParams style_from_json(const nlohmann::json& j) {
  SynthStyleParams s;
  s.target_size = j.value("target_size", s.target_size);
  s.tactip_background = j.value("tactip_background", s.tactip_background);
  s.tactip_dot_value = j.value("tactip_dot_value", s.tactip_dot_value);
  s.lattice_pitch_px = j.value("lattice_pitch_px", s.lattice_pitch_px);
  s.dot_radius_px = j.value("dot_radius_px", s.dot_radius_px);
  s.marker_disp_gain_px = j.value("marker_disp_gain_px", s.marker_disp_gain_px);
  s.vitac_base_r = j.value("vitac_base_r", s.vitac_base_r);
  s.vitac_base_g = j.value("vitac_base_g", s.vitac_base_g);
  s.vitac_base_b = j.value("vitac_base_b", s.vitac_base_b);
  s.shade_gain = j.value("shade_gain", s.shade_gain);
  s.depth_brightness = j.value("depth_brightness", s.depth_brightness);
  s.light_dir_x = j.value("light_dir_x", s.light_dir_x);
  s.light_dir_y = j.value("light_dir_y", s.light_dir_y);
  s.marker_amplitude = j.value("marker_amplitude", s.marker_amplitude);
  return s;
}

inline nlohmann::json style_to_json(const SynthStyleParams& s) {
  return {{"target_size", s.target_size},
          {"tactip_background", s.tactip_background},
          {"tactip_dot_value", s.tactip_dot_value},
          {"lattice_pitch_px", s.lattice_pitch_px},
          {"dot_radius_px", s.dot_radius_px},
          {"marker_disp_gain_px", s.marker_disp_gain_px},
          {"vitac_base_r", s.vitac_base_r},
          {"vitac_base_g", s.vitac_base_g},
          {"vitac_base_b", s.vitac_base_b},
          {"shade_gain", s.shade_gain},
          {"depth_brightness", s.depth_brightness},
          {"light_dir_x", s.light_dir_x},
          {"light_dir_y", s.light_dir_y},
          {"marker_amplitude", s.marker_amplitude}};
}

namespace detail {

inline float sample_or_zero(const ImageF& img, double fx, double fy) {
  return bilinear_sample(img, fx, fy);
}

}  // namespace detail

// Hexagonal marker lattice, each dot displaced radially away from the
// contact centroid in proportion to the local depth under the dot.
// Returns coverage in [0,1] per pixel (anti-aliased discs).
inline ImageF marker_layer(const ImageF& control, const SynthStyleParams& s) {
  ImageF layer(control.width, control.height, 0.0f);

  // intensity centroid; an all-zero control leaves dots undisplaced
  double sum = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < control.height; ++y)
    for (int x = 0; x < control.width; ++x) {
      const double v = control.at(x, y);
      sum += v;
      sx += v * x;
      sy += v * y;
    }
  const bool has_mass = sum > 1e-9;
  const double cx = has_mass ? sx / sum : control.width / 2.0;
  const double cy = has_mass ? sy / sum : control.height / 2.0;

  const double pitch = s.lattice_pitch_px;
  const double row_h = pitch * 0.8660254037844386;
  const double margin = pitch;
  int row = 0;
  for (double ly = -margin; ly < control.height + margin; ly += row_h, ++row) {
    const double offset = (row % 2) ? pitch / 2.0 : 0.0;
    for (double lx = -margin + offset; lx < control.width + margin;
         lx += pitch) {
      const double depth = detail::sample_or_zero(control, lx, ly);
      double dx = lx - cx, dy = ly - cy;
      const double len = std::sqrt(dx * dx + dy * dy);
      if (len > 1e-9 && depth > 0.0) {
        const double disp = s.marker_disp_gain_px * depth;
        dx = dx / len * disp;
        dy = dy / len * disp;
      } else {
        dx = dy = 0.0;
      }
      const double px = lx + dx, py = ly + dy;
      const double r = s.dot_radius_px;
      const int x0 = std::max(0, static_cast<int>(std::floor(px - r - 1)));
      const int x1 = std::min(control.width - 1,
                              static_cast<int>(std::ceil(px + r + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(py - r - 1)));
      const int y1 = std::min(control.height - 1,
                              static_cast<int>(std::ceil(py + r + 1)));
      for (int yy = y0; yy <= y1; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          const double dist = std::sqrt((xx - px) * (xx - px) +
                                        (yy - py) * (yy - py));
          const float cov =
              static_cast<float>(std::clamp(r + 0.5 - dist, 0.0, 1.0));
          layer.at(xx, yy) = std::max(layer.at(xx, yy), cov);
        }
      }
    }
  }
  return layer;
}

// Depth-gradient shading capped at 1 - marker_amplitude so marker
// compositing never clips.
inline ImageRGB vitac_shading(const ImageF& control,
                              const SynthStyleParams& s) {
  ImageRGB out(control.width, control.height);
  const double cap = 1.0 - s.marker_amplitude;
  for (int y = 0; y < control.height; ++y) {
    for (int x = 0; x < control.width; ++x) {
      const int xm = std::max(0, x - 1), xp = std::min(control.width - 1, x + 1);
      const int ym = std::max(0, y - 1), yp = std::min(control.height - 1, y + 1);
      const double gx = (control.at(xp, y) - control.at(xm, y)) * 0.5;
      const double gy = (control.at(x, yp) - control.at(x, ym)) * 0.5;
      const double shade =
          s.shade_gain * (gx * s.light_dir_x + gy * s.light_dir_y);
      const double lift = s.depth_brightness * control.at(x, y) + shade;
      const double base[3] = {s.vitac_base_r, s.vitac_base_g, s.vitac_base_b};
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) =
            static_cast<float>(std::clamp(base[c] + lift, 0.0, cap));
    }
  }
  return out;
}

// Deterministic per-modality synthetic target from a control image.
inline ImageRGB synth_target(const ImageF& control_native, SensorModality m,
                             const SynthStyleParams& s) {
  const ImageF control = downsample_to(control_native, s.target_size);
  switch (m) {
    case SensorModality::TacTip: {
      const ImageF layer = marker_layer(control, s);
      ImageRGB out(control.width, control.height);
      for (int y = 0; y < control.height; ++y)
        for (int x = 0; x < control.width; ++x) {
          const float v = static_cast<float>(
              s.tactip_background +
              (s.tactip_dot_value - s.tactip_background) * layer.at(x, y));
          for (int c = 0; c < 3; ++c) out.at(x, y, c) = v;
        }
      return out;
    }
    case SensorModality::ViTac:
      return vitac_shading(control, s);
    case SensorModality::ViTacTip: {
      ImageRGB out = vitac_shading(control, s);
      const ImageF layer = marker_layer(control, s);
      for (int y = 0; y < control.height; ++y)
        for (int x = 0; x < control.width; ++x) {
          const float add =
              static_cast<float>(s.marker_amplitude) * layer.at(x, y);
          for (int c = 0; c < 3; ++c) out.at(x, y, c) += add;
        }
      return out;
    }
  }
  fail(ErrorCode::BadConfig, "unreachable modality");
}

inline ImageRGB synth_target(const ControlImage& control, SensorModality m,
                             const SynthStyleParams& s) {
  return synth_target(control.img, m, s);
}

inline std::string target_file_name(const std::string& object_id,
                                    int64_t frame, SensorModality m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_%05lld_",
                static_cast<long long>(frame));
  return object_id + buf + modality_name(m) + ".png";
}

}  // namespace tactsynth
