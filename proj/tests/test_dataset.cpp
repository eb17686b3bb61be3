#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <map>

#include "tactsynth/dataset.hpp"
#include "tactsynth/render.hpp"
#include "tactsynth/shapes.hpp"
#include "test_util.hpp"

using namespace tactsynth;

namespace {

Manifest synthetic_manifest(const std::vector<std::string>& objects,
                            int frames_per_object) {
  Manifest m;
  m.objects = objects;
  for (const auto& obj : objects) {
    for (int f = 0; f < frames_per_object; ++f) {
      const ContactPose pose{(f % 11) - 5.0, ((f * 3) % 11) - 5.0,
                             ((f % 21) - 10) / 10.0, ((f * 7) % 181) - 90.0};
      for (SensorModality mod : kAllModalities) {
        SampleRecord r;
        r.object_id = obj;
        r.frame = f;
        r.pose = pose;
        r.modality = mod;
        r.control_image = obj + "_c.png";
        r.prompt = obj + "_p.json";
        r.target = obj + "_t.png";
        m.records.push_back(r);
      }
    }
  }
  return m;
}

std::map<Partition, size_t> partition_counts(const Manifest& m,
                                             SensorModality only) {
  std::map<Partition, size_t> counts;
  for (const auto& r : m.records)
    if (r.modality == only) counts[r.partition]++;
  return counts;
}

ImageF sphere_control(int res = 128) {
  const DepthMap d = render_depth(shapes::make_sphere(14.0, 1.9, 48, 24),
                                  testutil::test_camera(res, 0.48));
  return d.img;
}

}  // namespace

TEST_CASE("largest-remainder apportionment of 10 keys is 7/2/1") {
  const auto counts = apportion(10, SplitRatios{});
  CHECK(counts[0] == 7);
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 1);
}

TEST_CASE("published split counts reproduce on a 2500-key manifest") {
  const Manifest m = synthetic_manifest(
      {"straight_edge", "cuboid", "sphere", "pacman", "hollow_cylinder"}, 500);
  REQUIRE(m.records.size() == 7500);

  const Manifest split = stratified_split(m, SplitRatios{}, 1234);
  std::map<Partition, size_t> totals;
  for (const auto& r : split.records) totals[r.partition]++;
  CHECK(totals[Partition::Train] == 5250);
  CHECK(totals[Partition::Val] == 1125);
  CHECK(totals[Partition::Test] == 1125);

  for (SensorModality mod : kAllModalities) {
    auto counts = partition_counts(split, mod);
    CHECK(counts[Partition::Train] == 1750);
    CHECK(counts[Partition::Val] == 375);
    CHECK(counts[Partition::Test] == 375);
  }
}

TEST_CASE("per-object partition counts stay within one key of exact ratios") {
  const Manifest m = synthetic_manifest({"a", "b", "c"}, 43);
  const Manifest split = stratified_split(m, SplitRatios{}, 5);
  for (const auto& obj : m.objects) {
    std::map<Partition, std::set<int64_t>> keys;
    for (const auto& r : split.records)
      if (r.object_id == obj) keys[r.partition].insert(r.frame);
    CHECK(std::abs(double(keys[Partition::Train].size()) - 0.70 * 43) <= 1.0);
    CHECK(std::abs(double(keys[Partition::Val].size()) - 0.15 * 43) <= 1.0);
    CHECK(std::abs(double(keys[Partition::Test].size()) - 0.15 * 43) <= 1.0);
  }
}

TEST_CASE("split is deterministic in the seed and sensitive to it") {
  const Manifest m = synthetic_manifest({"a", "b"}, 40);
  const Manifest s1 = stratified_split(m, SplitRatios{}, 77);
  const Manifest s2 = stratified_split(m, SplitRatios{}, 77);
  const Manifest s3 = stratified_split(m, SplitRatios{}, 78);
  bool same_77 = true, same_78 = true;
  for (size_t i = 0; i < s1.records.size(); ++i) {
    same_77 = same_77 && s1.records[i].partition == s2.records[i].partition;
    same_78 = same_78 && s1.records[i].partition == s3.records[i].partition;
  }
  CHECK(same_77);
  CHECK_FALSE(same_78);
}

TEST_CASE("split never breaks manifest alignment") {
  const Manifest m = synthetic_manifest({"a", "b", "c"}, 31);
  const Manifest split = stratified_split(m, SplitRatios{}, 9);
  CHECK(verify_alignment(split).aligned());
}

TEST_CASE("split refuses unaligned manifests and lists offending keys") {
  Manifest m = synthetic_manifest({"a"}, 5);
  m.records.pop_back();  // drop one modality of the last key
  try {
    stratified_split(m, SplitRatios{}, 1);
    FAIL("expected unaligned-manifest error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnalignedManifest);
    CHECK(std::string(e.what()).find("a#4") != std::string::npos);
  }
}

TEST_CASE("verify_alignment flags pose and completeness violations") {
  SECTION("fresh manifest is aligned") {
    CHECK(verify_alignment(synthetic_manifest({"a"}, 6)).aligned());
  }
  SECTION("perturbed pose on one modality is reported") {
    Manifest m = synthetic_manifest({"a"}, 6);
    for (auto& r : m.records)
      if (r.frame == 3 && r.modality == SensorModality::ViTac)
        r.pose.x += 0.25;
    const auto report = verify_alignment(m);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].key == SampleKey{"a", 3});
    CHECK(report.violations[0].kind == "pose-mismatch");
  }
  SECTION("missing modality is reported as incomplete") {
    Manifest m = synthetic_manifest({"a"}, 6);
    std::erase_if(m.records, [](const SampleRecord& r) {
      return r.frame == 2 && r.modality == SensorModality::TacTip;
    });
    const auto report = verify_alignment(m);
    REQUIRE(report.violations.size() == 1);
    CHECK(report.violations[0].kind == "incomplete");
    CHECK(report.violations[0].detail.find("TacTip") != std::string::npos);
  }
  SECTION("partition mismatch is reported") {
    Manifest m = stratified_split(synthetic_manifest({"a"}, 6), SplitRatios{}, 3);
    m.records[0].partition = m.records[0].partition == Partition::Train
                                 ? Partition::Test
                                 : Partition::Train;
    CHECK_FALSE(verify_alignment(m).aligned());
  }
}

TEST_CASE("manifest JSONL round-trips") {
  testutil::TempDir tmp("manifest");
  const Manifest m =
      stratified_split(synthetic_manifest({"a", "b"}, 9), SplitRatios{}, 4);
  const auto path = tmp.path / "m.jsonl";
  save_manifest(m, path);
  const Manifest back = load_manifest(path);
  REQUIRE(back.records.size() == m.records.size());
  CHECK(back.seed == m.seed);
  CHECK(back.split_applied);
  for (size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].object_id == m.records[i].object_id);
    CHECK(back.records[i].frame == m.records[i].frame);
    CHECK(back.records[i].partition == m.records[i].partition);
    CHECK(back.records[i].pose.x == m.records[i].pose.x);
    CHECK(back.records[i].pose.yaw == m.records[i].pose.yaw);
  }
}

TEST_CASE("zero control image produces the no-contact targets") {
  const ImageF zero(64, 64, 0.0f);
  SynthStyleParams style;

  SECTION("TacTip: undisplaced lattice on flat background") {
    const ImageRGB t = synth_target(zero, SensorModality::TacTip, style);
    const ImageF layer = marker_layer(zero, style);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const float want = static_cast<float>(
            style.tactip_background +
            (style.tactip_dot_value - style.tactip_background) *
                layer.at(x, y));
        REQUIRE(t.at(x, y, 0) == want);
        REQUIRE(t.at(x, y, 1) == want);
        REQUIRE(t.at(x, y, 2) == want);
      }
    // some dots must actually exist
    float maxv = 0;
    for (float v : t.v) maxv = std::max(maxv, v);
    CHECK(maxv > 0.9f);
  }

  SECTION("ViTac: flat unshaded background") {
    const ImageRGB t = synth_target(zero, SensorModality::ViTac, style);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        REQUIRE(t.at(x, y, 0) == t.at(0, 0, 0));
        REQUIRE(t.at(x, y, 1) == t.at(0, 0, 1));
        REQUIRE(t.at(x, y, 2) == t.at(0, 0, 2));
      }
  }
}

TEST_CASE("ViTacTip minus ViTac is exactly the marker layer") {
  const ImageF control = sphere_control();
  SynthStyleParams style;
  style.target_size = 64;
  const ImageRGB vt = synth_target(control, SensorModality::ViTac, style);
  const ImageRGB vtt = synth_target(control, SensorModality::ViTacTip, style);
  const ImageF layer = marker_layer(downsample_to(control, 64), style);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) {
        const float expected =
            vt.at(x, y, c) +
            static_cast<float>(style.marker_amplitude) * layer.at(x, y);
        REQUIRE(vtt.at(x, y, c) == expected);
      }
}

TEST_CASE("markers displace radially under contact") {
  SynthStyleParams style;
  const ImageF zero(64, 64, 0.0f);
  const ImageF control = sphere_control();
  const ImageRGB rest = synth_target(zero, SensorModality::TacTip, style);
  const ImageRGB pressed = synth_target(control, SensorModality::TacTip, style);
  double diff = 0;
  for (size_t i = 0; i < rest.v.size(); ++i)
    diff += std::abs(rest.v[i] - pressed.v[i]);
  CHECK(diff / rest.v.size() > 0.001);
}

TEST_CASE("modality targets are pairwise distinct for non-zero control") {
  const ImageF control = sphere_control();
  SynthStyleParams style;
  const ImageRGB a = synth_target(control, SensorModality::TacTip, style);
  const ImageRGB b = synth_target(control, SensorModality::ViTac, style);
  const ImageRGB c = synth_target(control, SensorModality::ViTacTip, style);
  auto mean_l1 = [](const ImageRGB& u, const ImageRGB& v) {
    double acc = 0;
    for (size_t i = 0; i < u.v.size(); ++i)
      acc += std::abs(double(u.v[i]) - double(v.v[i]));
    return acc / u.v.size();
  };
  CHECK(mean_l1(a, b) > 0.01);
  CHECK(mean_l1(a, c) > 0.01);
  CHECK(mean_l1(b, c) > 0.01);
}

TEST_CASE("style parameters round-trip through JSON") {
  SynthStyleParams s;
  s.lattice_pitch_px = 9.5;
  s.marker_amplitude = 0.3;
  const SynthStyleParams back = style_from_json(style_to_json(s));
  CHECK(back.lattice_pitch_px == 9.5);
  CHECK(back.marker_amplitude == 0.3);
  CHECK(back.target_size == s.target_size);
}
