#include <catch2/catch_amalgamated.hpp>

#include "tactsynth/png_io.hpp"
#include "tactsynth/rng.hpp"
#include "test_util.hpp"

using namespace tactsynth;

TEST_CASE("16-bit grayscale PNG round-trips at quantization precision") {
  testutil::TempDir tmp("png16");
  Rng rng(3);
  ImageF img(37, 23);
  for (float& v : img.v) v = static_cast<float>(rng.uniform());
  const auto path = tmp.path / "x.png";
  png::save_gray16(path, img);
  const ImageF back = png::load_gray16(path);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (size_t i = 0; i < img.v.size(); ++i)
    CHECK(std::abs(back.v[i] - img.v[i]) <= 0.5f / 65535.0f + 1e-7f);
}

TEST_CASE("16-bit quantization is round(v * 65535)") {
  testutil::TempDir tmp("pngq");
  ImageF img(3, 1);
  img.v = {0.0f, 1.0f, 0.25f};
  const auto path = tmp.path / "q.png";
  png::save_gray16(path, img);
  const auto raw = png::decode(png::read_file(path));
  auto sample = [&](int i) {
    return (raw.pixels[2 * i] << 8) | raw.pixels[2 * i + 1];
  };
  CHECK(sample(0) == 0);
  CHECK(sample(1) == 65535);
  CHECK(sample(2) == static_cast<int>(std::lround(0.25 * 65535)));
}

TEST_CASE("RGB8 PNG round-trips at 8-bit precision") {
  testutil::TempDir tmp("png8");
  Rng rng(5);
  ImageRGB img(19, 31);
  for (float& v : img.v) v = static_cast<float>(rng.uniform());
  const auto path = tmp.path / "c.png";
  png::save_rgb8(path, img);
  const ImageRGB back = png::load_rgb8(path);
  REQUIRE(back.width == img.width);
  for (size_t i = 0; i < img.v.size(); ++i)
    CHECK(std::abs(back.v[i] - img.v[i]) <= 0.5f / 255.0f + 1e-7f);
}

TEST_CASE("PNG encoding is byte-deterministic") {
  Rng rng(9);
  ImageF img(64, 64);
  for (float& v : img.v) v = static_cast<float>(rng.uniform());
  png::RawPng raw;
  raw.width = 64;
  raw.height = 64;
  raw.format = png::Format::Gray16;
  raw.pixels.resize(64 * 64 * 2);
  for (size_t i = 0; i < img.v.size(); ++i) {
    const uint16_t q = static_cast<uint16_t>(std::lround(img.v[i] * 65535.0f));
    raw.pixels[2 * i] = static_cast<uint8_t>(q >> 8);
    raw.pixels[2 * i + 1] = static_cast<uint8_t>(q & 0xff);
  }
  CHECK(png::encode(raw) == png::encode(raw));
}

TEST_CASE("decoder rejects non-PNG bytes") {
  CHECK_THROWS_AS(png::decode({1, 2, 3, 4}), Error);
}

TEST_CASE("masks persist as 8-bit 0/255") {
  testutil::TempDir tmp("mask");
  std::vector<uint8_t> mask = {1, 0, 1, 0, 0, 1};
  const auto path = tmp.path / "m.png";
  png::save_mask(path, mask, 3, 2);
  const auto raw = png::decode(png::read_file(path));
  REQUIRE(raw.format == png::Format::Gray8);
  CHECK(raw.pixels == std::vector<uint8_t>{255, 0, 255, 0, 0, 255});
}
