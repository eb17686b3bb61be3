#pragma once

// Minimal PNG reader/writer over zlib covering exactly the formats the
// pipeline persists: 16-bit grayscale (depth/control images), 8-bit
// grayscale (masks), 8-bit RGB (targets and samples). Scanlines are written
// with filter type 0 and a fixed compression level so output bytes are
// reproducible. The reader handles all five filter types; interlace and
// palettes are rejected.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tactsynth/common.hpp"
#include "tactsynth/image.hpp"

namespace tactsynth {
namespace png {

enum class Format { Gray8, Gray16, Rgb8 };

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[4],
                         const uint8_t* data, size_t len) {
  put_u32(out, static_cast<uint32_t>(len));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  uint32_t crc = crc32(0, out.data() + start, static_cast<uInt>(len + 4));
  put_u32(out, crc);
}

inline std::vector<uint8_t> deflate_all(const std::vector<uint8_t>& raw,
                                        int level) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), level) != Z_OK)
    fail(ErrorCode::BadPng, "deflate failed");
  out.resize(bound);
  return out;
}

inline std::vector<uint8_t> inflate_all(const uint8_t* data, size_t len,
                                        size_t expected) {
  std::vector<uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  if (uncompress(out.data(), &out_len, data, static_cast<uLong>(len)) != Z_OK ||
      out_len != expected)
    fail(ErrorCode::BadPng, "inflate failed or size mismatch");
  return out;
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

struct RawPng {
  int width = 0;
  int height = 0;
  Format format = Format::Gray8;
  std::vector<uint8_t> pixels;  // unfiltered scanline payload, big-endian 16-bit
};

inline std::vector<uint8_t> encode(const RawPng& img, int zlib_level = 6) {
  const int channels = img.format == Format::Rgb8 ? 3 : 1;
  const int bytes_per_sample = img.format == Format::Gray16 ? 2 : 1;
  const size_t stride =
      static_cast<size_t>(img.width) * channels * bytes_per_sample;
  if (img.pixels.size() != stride * img.height)
    fail(ErrorCode::BadPng, "pixel buffer size mismatch");

  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + y * stride,
               img.pixels.begin() + (y + 1) * stride);
  }
  const std::vector<uint8_t> idat = detail::deflate_all(raw, zlib_level);

  std::vector<uint8_t> out;
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);

  uint8_t ihdr[13];
  ihdr[0] = static_cast<uint8_t>(img.width >> 24);
  ihdr[1] = static_cast<uint8_t>(img.width >> 16);
  ihdr[2] = static_cast<uint8_t>(img.width >> 8);
  ihdr[3] = static_cast<uint8_t>(img.width);
  ihdr[4] = static_cast<uint8_t>(img.height >> 24);
  ihdr[5] = static_cast<uint8_t>(img.height >> 16);
  ihdr[6] = static_cast<uint8_t>(img.height >> 8);
  ihdr[7] = static_cast<uint8_t>(img.height);
  ihdr[8] = static_cast<uint8_t>(bytes_per_sample * 8);
  ihdr[9] = img.format == Format::Rgb8 ? 2 : 0;
  ihdr[10] = 0;  // compression
  ihdr[11] = 0;  // filter method
  ihdr[12] = 0;  // no interlace
  detail::append_chunk(out, "IHDR", ihdr, 13);
  detail::append_chunk(out, "IDAT", idat.data(), idat.size());
  detail::append_chunk(out, "IEND", nullptr, 0);
  return out;
}

inline RawPng decode(const std::vector<uint8_t>& bytes) {
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    fail(ErrorCode::BadPng, "not a PNG file");

  RawPng img;
  int bit_depth = 0, color_type = -1;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = detail::get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size())
      fail(ErrorCode::BadPng, "truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* data = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) fail(ErrorCode::BadPng, "bad IHDR");
      img.width = static_cast<int>(detail::get_u32(data));
      img.height = static_cast<int>(detail::get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      if (data[12] != 0) fail(ErrorCode::BadPng, "interlaced PNG unsupported");
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0)
    fail(ErrorCode::BadPng, "missing IHDR");

  int channels;
  if (color_type == 0 && bit_depth == 8) {
    img.format = Format::Gray8;
    channels = 1;
  } else if (color_type == 0 && bit_depth == 16) {
    img.format = Format::Gray16;
    channels = 1;
  } else if (color_type == 2 && bit_depth == 8) {
    img.format = Format::Rgb8;
    channels = 3;
  } else {
    fail(ErrorCode::BadPng, "unsupported color type / bit depth");
  }

  const int bps = bit_depth / 8;
  const size_t stride = static_cast<size_t>(img.width) * channels * bps;
  const size_t expected = (stride + 1) * img.height;
  std::vector<uint8_t> raw =
      detail::inflate_all(idat.data(), idat.size(), expected);

  // Undo per-scanline filters in place.
  img.pixels.resize(stride * img.height);
  const int bpp = channels * bps;
  for (int y = 0; y < img.height; ++y) {
    const uint8_t filter = raw[y * (stride + 1)];
    const uint8_t* src = raw.data() + y * (stride + 1) + 1;
    uint8_t* dst = img.pixels.data() + y * stride;
    const uint8_t* prev = y > 0 ? img.pixels.data() + (y - 1) * stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = prev ? prev[i] : 0;
      const int c = (prev && i >= static_cast<size_t>(bpp)) ? prev[i - bpp] : 0;
      int x = src[i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += detail::paeth(a, b, c); break;
        default: fail(ErrorCode::BadPng, "bad filter type");
      }
      dst[i] = static_cast<uint8_t>(x);
    }
  }
  return img;
}

inline void write_file(const std::filesystem::path& path,
                       const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::IoError, "write failed: " + path.string());
}

inline std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return bytes;
}

// Grayscale float [0,1] <-> 16-bit PNG, value = round(depth * 65535).
inline void save_gray16(const std::filesystem::path& path, const ImageF& img,
                        int zlib_level = 6) {
  RawPng raw;
  raw.width = img.width;
  raw.height = img.height;
  raw.format = Format::Gray16;
  raw.pixels.resize(img.size() * 2);
  for (size_t i = 0; i < img.size(); ++i) {
    float x = std::clamp(img.v[i], 0.0f, 1.0f);
    const uint16_t q = static_cast<uint16_t>(std::lround(x * 65535.0f));
    raw.pixels[2 * i] = static_cast<uint8_t>(q >> 8);
    raw.pixels[2 * i + 1] = static_cast<uint8_t>(q & 0xff);
  }
  write_file(path, encode(raw, zlib_level));
}

inline ImageF load_gray16(const std::filesystem::path& path) {
  RawPng raw = decode(read_file(path));
  if (raw.format != Format::Gray16)
    fail(ErrorCode::BadPng, "expected 16-bit grayscale: " + path.string());
  ImageF img(raw.width, raw.height);
  for (size_t i = 0; i < img.size(); ++i) {
    const uint16_t q =
        static_cast<uint16_t>((raw.pixels[2 * i] << 8) | raw.pixels[2 * i + 1]);
    img.v[i] = static_cast<float>(q) / 65535.0f;
  }
  return img;
}

// Boolean masks persist as 8-bit {0,255}.
inline void save_mask(const std::filesystem::path& path,
                      const std::vector<uint8_t>& mask, int width, int height,
                      int zlib_level = 6) {
  RawPng raw;
  raw.width = width;
  raw.height = height;
  raw.format = Format::Gray8;
  raw.pixels.resize(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) raw.pixels[i] = mask[i] ? 255 : 0;
  write_file(path, encode(raw, zlib_level));
}

inline void save_rgb8(const std::filesystem::path& path, const ImageRGB& img,
                      int zlib_level = 6) {
  RawPng raw;
  raw.width = img.width;
  raw.height = img.height;
  raw.format = Format::Rgb8;
  raw.pixels.resize(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    float x = std::clamp(img.v[i], 0.0f, 1.0f);
    raw.pixels[i] = static_cast<uint8_t>(std::lround(x * 255.0f));
  }
  write_file(path, encode(raw, zlib_level));
}

inline ImageRGB load_rgb8(const std::filesystem::path& path) {
  RawPng raw = decode(read_file(path));
  if (raw.format != Format::Rgb8)
    fail(ErrorCode::BadPng, "expected 8-bit RGB: " + path.string());
  ImageRGB img(raw.width, raw.height);
  for (size_t i = 0; i < img.size(); ++i)
    img.v[i] = static_cast<float>(raw.pixels[i]) / 255.0f;
  return img;
}

}  // namespace png
}  // namespace tactsynth
