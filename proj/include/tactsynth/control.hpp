#pragma once

// Pose-aligned control image construction. A raw depth map is warped per
// pose record: translate the mask centroid onto the calibrated target pixel,
// scale and brighten with indentation depth, rotate by yaw, then validate
// the realized centroid against the target. Frames that miss the alignment
// bound get one centroid-corrected retry before landing in the rejects
// report.
//
// Pixel conventions: x = column, y = row, positive pose x/y move the object
// toward +column/+row. Yaw is counterclockwise in that (x, y) frame.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <atomic>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/common.hpp"
#include "tactsynth/geometry.hpp"
#include "tactsynth/image.hpp"
#include "tactsynth/png_io.hpp"
#include "tactsynth/render.hpp"

namespace tactsynth {

struct CalibrationParams {
  double mm_per_pixel_x = 0.12;
  double mm_per_pixel_y = 0.12;
  double center_x = 255.5;  // image centre, pixel-index coords
  double center_y = 255.5;
  double z_intensity_gain = 0.3;  // brightness multiplier per mm indentation
  double z_scale_gain = 0.1;      // size multiplier per mm indentation

  void validate() const {
    if (mm_per_pixel_x <= 0.0 || mm_per_pixel_y <= 0.0)
      fail(ErrorCode::BadConfig, "mm_per_pixel must be positive");
    if (z_intensity_gain < 0.0 || z_scale_gain < 0.0)
      fail(ErrorCode::BadConfig, "calibration gains must be >= 0");
  }

  // Stable digest so control images can record which calibration made them.
  std::string digest() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.9g|%.9g|%.9g|%.9g|%.9g|%.9g",
                  mm_per_pixel_x, mm_per_pixel_y, center_x, center_y,
                  z_intensity_gain, z_scale_gain);
    uint64_t h = 0xcbf29ce484222325ull;
    for (const char* p = buf; *p; ++p) {
      h ^= static_cast<unsigned char>(*p);
      h *= 0x100000001b3ull;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx",
                  static_cast<unsigned long long>(h));
    return out;
  }
};

inline CalibrationParams calibration_from_json(const nlohmann::json& j) {
  CalibrationParams cal;
  cal.mm_per_pixel_x = j.value("mm_per_pixel_x", cal.mm_per_pixel_x);
  cal.mm_per_pixel_y = j.value("mm_per_pixel_y", cal.mm_per_pixel_y);
  cal.center_x = j.value("center_x", cal.center_x);
  cal.center_y = j.value("center_y", cal.center_y);
  cal.z_intensity_gain = j.value("z_intensity_gain", cal.z_intensity_gain);
  cal.z_scale_gain = j.value("z_scale_gain", cal.z_scale_gain);
  cal.validate();
  return cal;
}

inline nlohmann::json calibration_to_json(const CalibrationParams& cal) {
  return {{"mm_per_pixel_x", cal.mm_per_pixel_x},
          {"mm_per_pixel_y", cal.mm_per_pixel_y},
          {"center_x", cal.center_x},
          {"center_y", cal.center_y},
          {"z_intensity_gain", cal.z_intensity_gain},
          {"z_scale_gain", cal.z_scale_gain}};
}

struct ControlImage {
  ImageF img;
  std::string object_id;
  ContactPose pose;
  std::string calibration_digest;
};

struct PoseRecord {
  int64_t frame = 0;
  ContactPose pose;
};

struct PoseLog {
  std::vector<PoseRecord> records;
};

struct PoseRowError {
  size_t row = 0;  // 1-based data row
  int64_t frame = -1;
  std::string message;
};

struct PoseLogParse {
  PoseLog log;
  std::vector<PoseRowError> row_errors;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(0, 1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
  }
  return out;
}

inline double parse_number(const std::string& s, size_t row,
                           const std::string& col) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      fail(ErrorCode::BadNumber, "trailing characters in '" + s + "'");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail(ErrorCode::BadNumber, "unparsable number '" + s + "' in column " +
                                   col + " at row " + std::to_string(row));
  }
}

// Tolerant row-by-row parse; structural problems (bad header) still throw.
inline PoseLogParse parse_pose_log_rows(const std::vector<uint8_t>& csv) {
  PoseLogParse out;
  std::string text(csv.begin(), csv.end());
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCode::MissingColumn, "empty pose log (no header row)");
  const std::vector<std::string> header = split_csv_line(line);
  int idx_frame = -1, idx_x = -1, idx_y = -1, idx_z = -1, idx_yaw = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "frame") idx_frame = static_cast<int>(i);
    else if (header[i] == "x") idx_x = static_cast<int>(i);
    else if (header[i] == "y") idx_y = static_cast<int>(i);
    else if (header[i] == "z") idx_z = static_cast<int>(i);
    else if (header[i] == "yaw") idx_yaw = static_cast<int>(i);
  }
  for (const auto& [name, idx] : {std::pair<const char*, int>{"frame", idx_frame},
                                  {"x", idx_x},
                                  {"y", idx_y},
                                  {"z", idx_z},
                                  {"yaw", idx_yaw}})
    if (idx < 0)
      fail(ErrorCode::MissingColumn,
           std::string("pose log header lacks column '") + name + "'");

  std::set<int64_t> seen;
  size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    try {
      const auto fields = split_csv_line(line);
      const size_t need = static_cast<size_t>(
          std::max({idx_frame, idx_x, idx_y, idx_z, idx_yaw}) + 1);
      if (fields.size() < need)
        fail(ErrorCode::BadNumber,
             "row " + std::to_string(row) + " has too few fields");
      PoseRecord rec;
      const double frame_val =
          parse_number(fields[idx_frame], row, "frame");
      rec.frame = static_cast<int64_t>(frame_val);
      if (static_cast<double>(rec.frame) != frame_val)
        fail(ErrorCode::BadNumber,
             "frame id must be an integer at row " + std::to_string(row));
      rec.pose.x = parse_number(fields[idx_x], row, "x");
      rec.pose.y = parse_number(fields[idx_y], row, "y");
      rec.pose.z = parse_number(fields[idx_z], row, "z");
      rec.pose.yaw = parse_number(fields[idx_yaw], row, "yaw");
      if (!seen.insert(rec.frame).second)
        fail(ErrorCode::DuplicateFrame,
             "duplicate frame id " + std::to_string(rec.frame) + " at row " +
                 std::to_string(row));
      rec.pose = validate_pose(rec.pose, ValidationMode::Strict).pose;
      out.log.records.push_back(rec);
    } catch (const Error& e) {
      int64_t frame = -1;
      const auto fields = split_csv_line(line);
      if (idx_frame < static_cast<int>(fields.size())) {
        try {
          frame = std::stoll(fields[idx_frame]);
        } catch (...) {
        }
      }
      out.row_errors.push_back({row, frame, e.what()});
    }
  }
  return out;
}

}  // namespace detail

// Strict parse: any bad row aborts with its row index.
inline PoseLog parse_pose_log(const std::vector<uint8_t>& csv) {
  PoseLogParse parsed = detail::parse_pose_log_rows(csv);
  if (!parsed.row_errors.empty()) {
    const auto& e = parsed.row_errors.front();
    // Re-derive the code from the stored message prefix.
    std::string msg = e.message;
    for (ErrorCode c : {ErrorCode::BadNumber, ErrorCode::DuplicateFrame,
                        ErrorCode::PoseOutOfRange}) {
      const std::string prefix = std::string(error_code_name(c)) + ": ";
      if (msg.rfind(prefix, 0) == 0)
        fail(c, msg.substr(prefix.size()) +
                    " (row " + std::to_string(e.row) + ")");
    }
    fail(ErrorCode::BadNumber, msg);
  }
  return parsed.log;
}

inline PoseLogParse parse_pose_log_lenient(const std::vector<uint8_t>& csv) {
  return detail::parse_pose_log_rows(csv);
}

namespace detail {

inline float bilinear_sample(const ImageF& img, double fx, double fy) {
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0;
  const double ay = fy - y0;
  auto tap = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return 0.0;
    return img.at(x, y);
  };
  const double top = tap(x0, y0) * (1.0 - ax) + tap(x0 + 1, y0) * ax;
  const double bot = tap(x0, y0 + 1) * (1.0 - ax) + tap(x0 + 1, y0 + 1) * ax;
  return static_cast<float>(top * (1.0 - ay) + bot * ay);
}

inline float nearest_sample(const ImageF& img, double fx, double fy) {
  const int x = static_cast<int>(std::lround(fx));
  const int y = static_cast<int>(std::lround(fy));
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return 0.0f;
  return img.at(x, y);
}

}  // namespace detail

enum class Resampling { Bilinear, Nearest };

struct ApplyPoseOptions {
  Resampling resampling = Resampling::Bilinear;
  // Extra pixel offset added to the target position; used by the
  // centroid-correction retry in build_control_set.
  double extra_dx = 0.0;
  double extra_dy = 0.0;
};

inline Centroid pose_target_px(const ContactPose& p,
                               const CalibrationParams& cal) {
  return {cal.center_x + p.x / cal.mm_per_pixel_x,
          cal.center_y + p.y / cal.mm_per_pixel_y};
}

// Applies the pose as one composed affine warp. The contract order is
// translate -> scale -> modulate -> rotate, all about the mapped centroid;
// scale and rotation about the same fixed point compose into a single
// matrix, and the intensity modulation is a scalar multiply which commutes
// with the (convex) bilinear weights, so a single resampling pass realizes
// the same composition with less interpolation loss.
inline ControlImage apply_pose(const DepthMap& d, const ObjectMask& mask,
                               const ContactPose& p,
                               const CalibrationParams& cal,
                               const std::string& object_id = "",
                               const ApplyPoseOptions& opt = {}) {
  cal.validate();
  const Centroid c0 = mask_centroid(mask);  // throws on empty mask
  const double s = 1.0 + cal.z_scale_gain * p.z;
  if (s <= 0.0)
    fail(ErrorCode::DegenerateScale,
         "scale factor " + std::to_string(s) + " at z = " + std::to_string(p.z));
  const Centroid q{pose_target_px(p, cal).x + opt.extra_dx,
                   pose_target_px(p, cal).y + opt.extra_dy};

  // Forward map: u = q + s * R(yaw) * (v - c0). Resample via the inverse.
  const double rad = p.yaw * (3.14159265358979323846 / 180.0);
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double inv_s = 1.0 / s;

  ControlImage out;
  out.img = ImageF(d.width(), d.height(), 0.0f);
  out.object_id = object_id;
  out.pose = p;
  out.calibration_digest = cal.digest();

  for (int y = 0; y < d.height(); ++y) {
    for (int x = 0; x < d.width(); ++x) {
      const double ux = x - q.x;
      const double uy = y - q.y;
      // inverse rotation then inverse scale
      const double rx = (cs * ux + sn * uy) * inv_s + c0.x;
      const double ry = (-sn * ux + cs * uy) * inv_s + c0.y;
      out.img.at(x, y) = opt.resampling == Resampling::Bilinear
                             ? detail::bilinear_sample(d.img, rx, ry)
                             : detail::nearest_sample(d.img, rx, ry);
    }
  }

  float max_i = 0.0f;
  for (float v : out.img.v) max_i = std::max(max_i, v);
  double mult = 1.0 + cal.z_intensity_gain * p.z;
  mult = std::max(mult, 0.0);
  if (max_i > 0.0f) mult = std::min(mult, 1.0 / static_cast<double>(max_i));
  if (mult != 1.0) {
    const float m = static_cast<float>(mult);
    for (float& v : out.img.v) v *= m;
  }
  return out;
}

// Euclidean distance in pixels between the realized mask centroid and the
// target position implied by the pose and calibration.
inline double alignment_error(const ControlImage& c, const ContactPose& p,
                              const CalibrationParams& cal,
                              float mask_threshold = 0.01f) {
  const ObjectMask mask = extract_mask(c.img, mask_threshold);
  const Centroid realized = mask_centroid(mask);  // throws on empty
  const Centroid target = pose_target_px(p, cal);
  const double dx = realized.x - target.x;
  const double dy = realized.y - target.y;
  return std::sqrt(dx * dx + dy * dy);
}

struct ControlFrameRecord {
  int64_t frame = 0;
  ContactPose pose;
  std::string image_path;  // relative to the manifest directory
  double alignment_error_px = 0.0;
  bool retried = false;
};

struct ControlReject {
  int64_t frame = -1;
  size_t row = 0;
  std::string reason;
};

struct ControlBuildResult {
  std::string object_id;
  std::vector<ControlFrameRecord> accepted;
  std::vector<ControlReject> rejects;
  std::filesystem::path manifest_path;
  std::filesystem::path rejects_path;
};

struct ControlBuildOptions {
  OrthoCamera camera;
  float mask_threshold = 0.01f;
  double max_alignment_error_px = 5.0;
  int threads = 1;
  int zlib_level = 6;
  bool write_images = true;
};

inline std::string frame_image_name(const std::string& object_id,
                                    int64_t frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_%05lld.png",
                static_cast<long long>(frame));
  return object_id + buf;
}

namespace detail {

inline nlohmann::ordered_json pose_to_json(const ContactPose& p) {
  nlohmann::ordered_json j;
  j["x"] = p.x;
  j["y"] = p.y;
  j["z"] = p.z;
  j["yaw"] = p.yaw;
  return j;
}

inline ContactPose pose_from_json(const nlohmann::json& j) {
  ContactPose p;
  p.x = j.at("x").get<double>();
  p.y = j.at("y").get<double>();
  p.z = j.at("z").get<double>();
  p.yaw = j.at("yaw").get<double>();
  return p;
}

}  // namespace detail

// Renders the canonical depth map once, then produces one pose-aligned
// control image per accepted pose record. Frames missing the alignment
// bound are re-warped once with the residual folded into the target before
// final rejection. Output order follows frame id, independent of threading.
inline ControlBuildResult build_control_set(
    const TriangleMesh& mesh, const PoseLogParse& parsed,
    const CalibrationParams& cal, const std::filesystem::path& out_dir,
    const std::string& object_id, const ControlBuildOptions& opt = {}) {
  cal.validate();
  std::filesystem::create_directories(out_dir);

  ControlBuildResult result;
  result.object_id = object_id;
  for (const auto& re : parsed.row_errors)
    result.rejects.push_back({re.frame, re.row, re.message});

  const DepthMap depth = render_depth(mesh, opt.camera);
  const ObjectMask mask = extract_mask(depth, opt.mask_threshold);

  const size_t n = parsed.log.records.size();
  std::vector<ControlFrameRecord> records(n);
  std::vector<std::string> errors(n);
  std::vector<uint8_t> ok(n, 0);

  auto process = [&](size_t i) {
    const PoseRecord& rec = parsed.log.records[i];
    try {
      ControlImage ci = apply_pose(depth, mask, rec.pose, cal, object_id);
      double err = alignment_error(ci, rec.pose, cal, opt.mask_threshold);
      bool retried = false;
      if (err >= opt.max_alignment_error_px) {
        // error-correction feedback: fold the measured residual back into
        // the target and re-warp once
        const ObjectMask m1 = extract_mask(ci.img, opt.mask_threshold);
        const Centroid realized = mask_centroid(m1);
        const Centroid target = pose_target_px(rec.pose, cal);
        ApplyPoseOptions retry_opt;
        retry_opt.extra_dx = target.x - realized.x;
        retry_opt.extra_dy = target.y - realized.y;
        ci = apply_pose(depth, mask, rec.pose, cal, object_id, retry_opt);
        err = alignment_error(ci, rec.pose, cal, opt.mask_threshold);
        retried = true;
      }
      if (err >= opt.max_alignment_error_px) {
        errors[i] = "alignment error " + std::to_string(err) +
                    " px exceeds bound after retry";
        return;
      }
      ControlFrameRecord out;
      out.frame = rec.frame;
      out.pose = rec.pose;
      out.alignment_error_px = err;
      out.retried = retried;
      out.image_path = frame_image_name(object_id, rec.frame);
      if (opt.write_images)
        png::save_gray16(out_dir / out.image_path, ci.img, opt.zlib_level);
      records[i] = out;
      ok[i] = 1;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };

  const int threads = std::max(1, opt.threads);
  if (threads == 1 || n < 2) {
    for (size_t i = 0; i < n; ++i) process(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int tid = 0; tid < threads; ++tid)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
          process(i);
      });
    for (auto& th : pool) th.join();
  }

  for (size_t i = 0; i < n; ++i) {
    if (ok[i])
      result.accepted.push_back(records[i]);
    else
      result.rejects.push_back({parsed.log.records[i].frame, 0, errors[i]});
  }
  std::sort(result.accepted.begin(), result.accepted.end(),
            [](const auto& a, const auto& b) { return a.frame < b.frame; });
  std::sort(result.rejects.begin(), result.rejects.end(),
            [](const auto& a, const auto& b) { return a.frame < b.frame; });

  // JSON sidecar shared by every frame of this object.
  {
    nlohmann::ordered_json side;
    side["object_id"] = object_id;
    side["mm_per_pixel"] = depth.mm_per_pixel;
    side["depth_range_mm"] = depth.depth_range_mm;
    side["calibration"] = calibration_to_json(cal);
    std::ofstream f(out_dir / (object_id + "_depth.json"));
    f << side.dump(2) << "\n";
  }

  result.manifest_path = out_dir / (object_id + "_control_manifest.jsonl");
  {
    std::ofstream f(result.manifest_path);
    if (!f) fail(ErrorCode::IoError, "cannot write manifest");
    for (const auto& r : result.accepted) {
      nlohmann::ordered_json j;
      j["object_id"] = object_id;
      j["frame"] = r.frame;
      j["pose"] = detail::pose_to_json(r.pose);
      j["control_image"] = r.image_path;
      j["alignment_error_px"] = r.alignment_error_px;
      j["retried"] = r.retried;
      f << j.dump() << "\n";
    }
  }
  result.rejects_path = out_dir / (object_id + "_rejects.jsonl");
  {
    std::ofstream f(result.rejects_path);
    if (!f) fail(ErrorCode::IoError, "cannot write rejects report");
    for (const auto& r : result.rejects) {
      nlohmann::ordered_json j;
      j["object_id"] = object_id;
      j["frame"] = r.frame;
      if (r.row) j["row"] = r.row;
      j["reason"] = r.reason;
      f << j.dump() << "\n";
    }
  }
  return result;
}

}  // namespace tactsynth
