#pragma once

// Error type and small shared utilities used across the library.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tactsynth {

enum class ErrorCode {
  // geometry
  TruncatedStl,
  MalformedAscii,
  EmptyMesh,
  PoseOutOfRange,
  // render / control
  EmptyMask,
  MissingColumn,
  DuplicateFrame,
  BadNumber,
  DegenerateScale,
  // prompts
  SchemaMismatch,
  MissingKey,
  ModalityNotFound,
  // dataset
  UnalignedManifest,
  // diffusion
  ShapeMismatch,
  NonFiniteLoss,
  NonFiniteLatent,
  BadCheckpoint,
  // metrics
  DimensionMismatch,
  ImageTooSmall,
  IndefiniteCovariance,
  // io / config
  IoError,
  BadPng,
  BadConfig,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::TruncatedStl: return "truncated-stl";
    case ErrorCode::MalformedAscii: return "malformed-ascii";
    case ErrorCode::EmptyMesh: return "empty-mesh";
    case ErrorCode::PoseOutOfRange: return "pose-out-of-range";
    case ErrorCode::EmptyMask: return "empty-mask";
    case ErrorCode::MissingColumn: return "missing-column";
    case ErrorCode::DuplicateFrame: return "duplicate-frame";
    case ErrorCode::BadNumber: return "bad-number";
    case ErrorCode::DegenerateScale: return "degenerate-scale";
    case ErrorCode::SchemaMismatch: return "schema-mismatch";
    case ErrorCode::MissingKey: return "missing-key";
    case ErrorCode::ModalityNotFound: return "modality-not-found";
    case ErrorCode::UnalignedManifest: return "unaligned-manifest";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::NonFiniteLoss: return "non-finite-loss";
    case ErrorCode::NonFiniteLatent: return "non-finite-latent";
    case ErrorCode::BadCheckpoint: return "bad-checkpoint";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::ImageTooSmall: return "image-too-small";
    case ErrorCode::IndefiniteCovariance: return "indefinite-covariance";
    case ErrorCode::IoError: return "io-error";
    case ErrorCode::BadPng: return "bad-png";
    case ErrorCode::BadConfig: return "bad-config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

// Fixed-point decimal formatting shared by prompts and manifests so emitted
// JSON is byte-reproducible. Negative zero collapses to "0.00" etc.
inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  if (s.find_first_of("123456789") == std::string::npos && s[0] == '-')
    s.erase(0, 1);
  return s;
}

}  // namespace tactsynth
