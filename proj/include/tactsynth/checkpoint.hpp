#pragma once

// Versioned binary checkpoint container: magic, schema version, named f32
// tensor table (little-endian), JSON metadata trailer.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tactsynth/common.hpp"

namespace tactsynth {

struct CheckpointTensor {
  std::string name;
  std::vector<uint32_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  static constexpr char kMagic[9] = "TSYNCKPT";
  static constexpr uint32_t kVersion = 1;

  std::vector<CheckpointTensor> tensors;
  nlohmann::ordered_json meta;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  void add(const std::string& name, std::vector<uint32_t> shape,
           std::vector<float> data) {
    tensors.push_back({name, std::move(shape), std::move(data)});
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::IoError, "cannot write checkpoint " + path.string());
    auto put_u32 = [&](uint32_t v) {
      uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                      static_cast<uint8_t>(v >> 16),
                      static_cast<uint8_t>(v >> 24)};
      f.write(reinterpret_cast<char*>(b), 4);
    };
    auto put_u64 = [&](uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        uint8_t b = static_cast<uint8_t>(v >> (8 * i));
        f.write(reinterpret_cast<char*>(&b), 1);
      }
    };
    f.write(kMagic, 8);
    put_u32(kVersion);
    put_u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      put_u32(static_cast<uint32_t>(t.name.size()));
      f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      put_u32(static_cast<uint32_t>(t.shape.size()));
      for (uint32_t d : t.shape) put_u32(d);
      put_u64(t.data.size());
      f.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * 4));
    }
    const std::string meta_str = meta.dump();
    put_u64(meta_str.size());
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    if (!f) fail(ErrorCode::IoError, "checkpoint write failed");
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::IoError, "cannot open checkpoint " + path.string());
    auto get_u32 = [&]() -> uint32_t {
      uint8_t b[4];
      f.read(reinterpret_cast<char*>(b), 4);
      return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
             (uint32_t(b[3]) << 24);
    };
    auto get_u64 = [&]() -> uint64_t {
      uint64_t v = 0;
      for (int i = 0; i < 8; ++i) {
        uint8_t b = 0;
        f.read(reinterpret_cast<char*>(&b), 1);
        v |= uint64_t(b) << (8 * i);
      }
      return v;
    };
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
      fail(ErrorCode::BadCheckpoint, "bad magic bytes");
    const uint32_t version = get_u32();
    if (version != kVersion)
      fail(ErrorCode::BadCheckpoint,
           "unsupported schema version " + std::to_string(version));
    Checkpoint ck;
    const uint32_t n = get_u32();
    for (uint32_t i = 0; i < n && f; ++i) {
      CheckpointTensor t;
      const uint32_t name_len = get_u32();
      t.name.resize(name_len);
      f.read(t.name.data(), name_len);
      const uint32_t ndim = get_u32();
      t.shape.resize(ndim);
      for (uint32_t d = 0; d < ndim; ++d) t.shape[d] = get_u32();
      const uint64_t count = get_u64();
      t.data.resize(count);
      f.read(reinterpret_cast<char*>(t.data.data()),
             static_cast<std::streamsize>(count * 4));
      ck.tensors.push_back(std::move(t));
    }
    const uint64_t meta_len = get_u64();
    std::string meta_str(meta_len, '\0');
    f.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!f) fail(ErrorCode::BadCheckpoint, "truncated checkpoint");
    try {
      ck.meta = nlohmann::ordered_json::parse(meta_str);
    } catch (const std::exception& e) {
      fail(ErrorCode::BadCheckpoint,
           std::string("bad metadata trailer: ") + e.what());
    }
    return ck;
  }
};

// ParamStore <-> checkpoint tensor table under a name prefix.
template <typename Store>
inline void store_to_checkpoint(const Store& store, const std::string& prefix,
                                Checkpoint& ck) {
  for (const auto& e : store.entries) {
    CheckpointTensor t;
    t.name = prefix + e.name;
    for (int d : e.shape) t.shape.push_back(static_cast<uint32_t>(d));
    t.data.resize(e.count());
    for (size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = static_cast<float>(store.data[e.offset + i]);
    ck.tensors.push_back(std::move(t));
  }
}

template <typename Store>
inline void store_from_checkpoint(Store& store, const std::string& prefix,
                                  const Checkpoint& ck) {
  for (const auto& e : store.entries) {
    const CheckpointTensor* t = ck.find(prefix + e.name);
    if (!t)
      fail(ErrorCode::BadCheckpoint, "missing tensor " + prefix + e.name);
    if (t->data.size() != e.count())
      fail(ErrorCode::BadCheckpoint, "shape mismatch for " + t->name);
    for (size_t i = 0; i < t->data.size(); ++i)
      store.data[e.offset + i] =
          static_cast<typename std::remove_reference_t<decltype(store.data[0])>>(
              t->data[i]);
  }
}

}  // namespace tactsynth
