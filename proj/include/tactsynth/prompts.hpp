#pragma once

// Structured textual conditions. The short schema carries sensor context and
// the 4-DoF pose; the long schema adds object/contact descriptions, style
// tags and negatives from a per-object template table. Serialization is
// byte-reproducible: fixed key order, 2 decimals for x/y/z, 1 for yaw.
//
// Text conditioning here is a modality-selection mechanism, so the encoder
// is an explicit 8-vector: one-hot modality (TacTip, ViTac, ViTacTip),
// normalized pose (x/5, y/5, z, yaw/90) and a schema flag.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/common.hpp"
#include "tactsynth/geometry.hpp"

namespace tactsynth {

enum class PromptSchema { Short, Long };

inline const char* schema_name(PromptSchema s) {
  return s == PromptSchema::Short ? "short" : "long";
}

inline PromptSchema schema_from_name(const std::string& s) {
  if (s == "short") return PromptSchema::Short;
  if (s == "long") return PromptSchema::Long;
  fail(ErrorCode::BadConfig, "unknown prompt schema '" + s + "'");
}

struct PromptTemplates {
  std::string object_description = "a contact object";
  std::string contact_description = "pressed against the sensor skin";
  std::vector<std::string> style_tags = {"high detail", "sensor imagery"};
  std::vector<std::string> negatives = {"blurry", "artefacts"};
};

struct StructuredPrompt {
  PromptSchema schema = PromptSchema::Short;
  SensorModality modality = SensorModality::TacTip;
  std::string sensor_context;
  ContactPose pose;
  // long-schema only
  std::string object_description;
  std::string contact_description;
  std::vector<std::string> style_tags;
  std::vector<std::string> negatives;
};

inline std::string sensor_context_text(SensorModality m) {
  return std::string(
             "captured by a high-resolution vision-based tactile sensor ") +
         modality_name(m) + ".";
}

namespace detail {

inline std::string json_escape(const std::string& s) {
  return nlohmann::json(s).dump();
}

inline std::string pose_object_text(const ContactPose& p) {
  return std::string("{\"x\": ") + format_fixed(p.x, 2) +
         ", \"y\": " + format_fixed(p.y, 2) +
         ", \"z\": " + format_fixed(p.z, 2) +
         ", \"yaw\": " + format_fixed(p.yaw, 1) + "}";
}

inline std::string string_array_text(const std::vector<std::string>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += json_escape(v[i]);
  }
  out += "]";
  return out;
}

}  // namespace detail

inline StructuredPrompt make_prompt(SensorModality m, const ContactPose& p,
                                    PromptSchema schema,
                                    const PromptTemplates& templates = {}) {
  StructuredPrompt sp;
  sp.schema = schema;
  sp.modality = m;
  sp.pose = validate_pose(p, ValidationMode::Strict).pose;
  sp.sensor_context = sensor_context_text(m);
  if (schema == PromptSchema::Long) {
    sp.object_description = templates.object_description;
    sp.contact_description = templates.contact_description;
    sp.style_tags = templates.style_tags;
    sp.negatives = templates.negatives;
  }
  return sp;
}

inline std::string serialize_prompt(const StructuredPrompt& sp) {
  std::string out = "{\n";
  if (sp.schema == PromptSchema::Long) {
    out += "  \"object_description\": " +
           detail::json_escape(sp.object_description) + ",\n";
    out += "  \"contact_description\": " +
           detail::json_escape(sp.contact_description) + ",\n";
  }
  out += "  \"sensor_context\": " + detail::json_escape(sp.sensor_context) +
         ",\n";
  if (sp.schema == PromptSchema::Long) {
    out += "  \"style_tags\": " + detail::string_array_text(sp.style_tags) +
           ",\n";
    out += "  \"negatives\": " + detail::string_array_text(sp.negatives) +
           ",\n";
  }
  out += "  \"object_pose\": " + detail::pose_object_text(sp.pose) + "\n}\n";
  return out;
}

inline SensorModality modality_from_context(const std::string& context) {
  // ViTacTip embeds both other names; test longest first.
  for (SensorModality m : {SensorModality::ViTacTip, SensorModality::ViTac,
                           SensorModality::TacTip})
    if (context.find(modality_name(m)) != std::string::npos) return m;
  fail(ErrorCode::ModalityNotFound,
       "sensor_context names no known modality: '" + context + "'");
}

inline StructuredPrompt parse_prompt(const std::string& text,
                                     bool strict = true) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCode::SchemaMismatch, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::SchemaMismatch, "prompt is not an object");

  static const std::vector<std::string> kShortKeys = {"sensor_context",
                                                      "object_pose"};
  static const std::vector<std::string> kLongKeys = {
      "object_description", "contact_description", "sensor_context",
      "style_tags",         "negatives",           "object_pose"};

  const bool has_long_fields = j.contains("object_description") ||
                               j.contains("contact_description") ||
                               j.contains("style_tags") ||
                               j.contains("negatives");
  const auto& keys = has_long_fields ? kLongKeys : kShortKeys;

  for (const auto& k : keys)
    if (!j.contains(k))
      fail(ErrorCode::MissingKey, "prompt lacks required key '" + k + "'");
  if (strict) {
    for (const auto& [k, v] : j.items()) {
      (void)v;
      bool known = false;
      for (const auto& want : keys) known = known || (k == want);
      if (!known)
        fail(ErrorCode::SchemaMismatch,
             "unexpected key '" + k + "' for " +
                 (has_long_fields ? "long" : "short") + " schema");
    }
  }

  StructuredPrompt sp;
  sp.schema = has_long_fields ? PromptSchema::Long : PromptSchema::Short;
  sp.sensor_context = j.at("sensor_context").get<std::string>();
  sp.modality = modality_from_context(sp.sensor_context);

  const auto& pose = j.at("object_pose");
  for (const char* k : {"x", "y", "z", "yaw"}) {
    if (!pose.contains(k))
      fail(ErrorCode::MissingKey,
           std::string("object_pose lacks component '") + k + "'");
    if (!pose.at(k).is_number())
      fail(ErrorCode::SchemaMismatch,
           std::string("object_pose component '") + k + "' is not a number");
  }
  sp.pose.x = pose.at("x").get<double>();
  sp.pose.y = pose.at("y").get<double>();
  sp.pose.z = pose.at("z").get<double>();
  sp.pose.yaw = pose.at("yaw").get<double>();
  sp.pose = validate_pose(sp.pose, ValidationMode::Strict).pose;

  if (sp.schema == PromptSchema::Long) {
    sp.object_description = j.at("object_description").get<std::string>();
    sp.contact_description = j.at("contact_description").get<std::string>();
    sp.style_tags = j.at("style_tags").get<std::vector<std::string>>();
    sp.negatives = j.at("negatives").get<std::vector<std::string>>();
  }
  return sp;
}

// 8-vector condition: one-hot modality, normalized pose, schema flag.
struct ConditionEmbedding {
  std::array<double, 8> v = {};

  static constexpr int kDim = 8;
};

inline ConditionEmbedding embed_prompt(const StructuredPrompt& sp) {
  ConditionEmbedding e;
  switch (sp.modality) {
    case SensorModality::TacTip: e.v[0] = 1.0; break;
    case SensorModality::ViTac: e.v[1] = 1.0; break;
    case SensorModality::ViTacTip: e.v[2] = 1.0; break;
  }
  e.v[3] = sp.pose.x / 5.0;
  e.v[4] = sp.pose.y / 5.0;
  e.v[5] = sp.pose.z / 1.0;
  e.v[6] = sp.pose.yaw / 90.0;
  e.v[7] = sp.schema == PromptSchema::Long ? 1.0 : 0.0;
  return e;
}

// Inverse of the pose normalization. Poses entering embeddings come from
// prompt JSON, whose precision is fixed at 2 (x/y/z) and 1 (yaw) decimals;
// quantizing to that grid makes the round-trip exact.
inline ContactPose denormalize_pose(const ConditionEmbedding& e) {
  // round to the decimal grid via integer division, which is correctly
  // rounded, rather than multiplying by an inexact step
  auto quant = [](double v, double denom) {
    return std::round(v * denom) / denom;
  };
  ContactPose p;
  p.x = quant(e.v[3] * 5.0, 100.0);
  p.y = quant(e.v[4] * 5.0, 100.0);
  p.z = quant(e.v[5] * 1.0, 100.0);
  p.yaw = quant(e.v[6] * 90.0, 10.0);
  return p;
}

inline SensorModality embedding_modality(const ConditionEmbedding& e) {
  if (e.v[0] == 1.0) return SensorModality::TacTip;
  if (e.v[1] == 1.0) return SensorModality::ViTac;
  if (e.v[2] == 1.0) return SensorModality::ViTacTip;
  fail(ErrorCode::ModalityNotFound, "embedding has no modality slot set");
}

inline std::string prompt_file_name(const std::string& object_id,
                                    int64_t frame, SensorModality m) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "_%05lld_",
                static_cast<long long>(frame));
  return object_id + buf + modality_name(m) + ".json";
}

}  // namespace tactsynth
