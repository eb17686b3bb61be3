#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "tactsynth/control.hpp"
#include "tactsynth/rng.hpp"
#include "tactsynth/shapes.hpp"
#include "test_util.hpp"

using namespace tactsynth;

namespace {

std::vector<uint8_t> bytes_of(const std::string& s) {
  return std::vector<uint8_t>(s.begin(), s.end());
}

struct Rendered {
  DepthMap depth;
  ObjectMask mask;
};

Rendered render_object(const TriangleMesh& mesh, int res = 512,
                       double mmpp = 0.12) {
  Rendered r;
  r.depth = render_depth(mesh, testutil::test_camera(res, mmpp));
  r.mask = extract_mask(r.depth, 0.01f);
  return r;
}

}  // namespace

TEST_CASE("pose log parses the published example row") {
  const auto parsed =
      parse_pose_log(bytes_of("frame,x,y,z,yaw\n0,3.17,0.97,-0.49,89.9\n"));
  REQUIRE(parsed.records.size() == 1);
  CHECK(parsed.records[0].frame == 0);
  CHECK(parsed.records[0].pose.x == 3.17);
  CHECK(parsed.records[0].pose.y == 0.97);
  CHECK(parsed.records[0].pose.z == -0.49);
  CHECK(parsed.records[0].pose.yaw == 89.9);
}

TEST_CASE("pose log header may reorder columns") {
  const auto parsed =
      parse_pose_log(bytes_of("yaw,z,frame,y,x\n10.0,0.5,7,-1.25,2.5\n"));
  REQUIRE(parsed.records.size() == 1);
  CHECK(parsed.records[0].frame == 7);
  CHECK(parsed.records[0].pose.x == 2.5);
  CHECK(parsed.records[0].pose.yaw == 10.0);
}

TEST_CASE("header-only pose log is empty") {
  CHECK(parse_pose_log(bytes_of("frame,x,y,z,yaw\n")).records.empty());
}

TEST_CASE("pose log error paths") {
  SECTION("out-of-range yaw names row 1") {
    try {
      parse_pose_log(bytes_of("frame,x,y,z,yaw\n0,0,0,0,95\n"));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::PoseOutOfRange);
      CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
  }
  SECTION("missing column") {
    try {
      parse_pose_log(bytes_of("frame,x,y,z\n0,0,0,0\n"));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingColumn);
      CHECK(std::string(e.what()).find("yaw") != std::string::npos);
    }
  }
  SECTION("duplicate frame id") {
    try {
      parse_pose_log(
          bytes_of("frame,x,y,z,yaw\n0,0,0,0,0\n0,1,0,0,0\n"));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DuplicateFrame);
    }
  }
  SECTION("unparsable number carries the row index") {
    try {
      parse_pose_log(
          bytes_of("frame,x,y,z,yaw\n0,0,0,0,0\n1,abc,0,0,0\n"));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadNumber);
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
  }
}

TEST_CASE("identity pose reproduces the depth map") {
  // centred symmetric object: centroid falls exactly on the image centre,
  // so the composed warp is the identity and bilinear taps integer pixels
  const auto r = render_object(shapes::make_cuboid());
  const auto cal = testutil::test_calibration();
  const ControlImage out =
      apply_pose(r.depth, r.mask, ContactPose{}, cal, "cuboid");
  REQUIRE(out.img.v.size() == r.depth.img.v.size());
  for (size_t i = 0; i < out.img.v.size(); ++i)
    REQUIRE(std::abs(out.img.v[i] - r.depth.img.v[i]) < 1e-6f);
}

TEST_CASE("two 90-degree yaws match one 180-degree yaw on a disc") {
  const auto r = render_object(shapes::make_sphere(14.0, 1.9));
  const auto cal = testutil::test_calibration();

  const ControlImage once =
      apply_pose(r.depth, r.mask, {0, 0, 0, 180}, cal, "sphere");

  const ControlImage half =
      apply_pose(r.depth, r.mask, {0, 0, 0, 90}, cal, "sphere");
  DepthMap half_d;
  half_d.img = half.img;
  half_d.mm_per_pixel = r.depth.mm_per_pixel;
  half_d.depth_range_mm = r.depth.depth_range_mm;
  const ObjectMask half_mask = extract_mask(half_d, 0.01f);
  const ControlImage twice =
      apply_pose(half_d, half_mask, {0, 0, 0, 90}, cal, "sphere");

  double max_diff = 0.0;
  for (size_t i = 0; i < once.img.v.size(); ++i)
    max_diff = std::max(
        max_diff, std::abs(double(once.img.v[i]) - double(twice.img.v[i])));
  CHECK(max_diff < 2.0 / 255.0);
}

TEST_CASE("x displacement of 5 mm at 0.1 mm/px moves the centroid 50 px") {
  const auto r = render_object(shapes::make_cuboid(), 512, 0.1);
  auto cal = testutil::test_calibration(512, 0.1);
  const ControlImage out =
      apply_pose(r.depth, r.mask, {5, 0, 0, 0}, cal, "cuboid");
  const auto c0 = mask_centroid(r.mask);
  const auto c1 = mask_centroid(extract_mask(out.img, 0.01f));
  CHECK(std::abs(c1.x - c0.x - 50.0) < 0.5);
  CHECK(std::abs(c1.y - c0.y) < 0.5);
}

TEST_CASE("alignment error is near zero for the identity pose") {
  const auto r = render_object(shapes::make_cuboid());
  const auto cal = testutil::test_calibration();
  const ControlImage out =
      apply_pose(r.depth, r.mask, ContactPose{}, cal, "cuboid");
  CHECK(alignment_error(out, ContactPose{}, cal) < 0.5);
}

TEST_CASE("alignment stays under 5 px across poses and objects") {
  const auto cal = testutil::test_calibration();
  for (const auto& name : {"cuboid", "pacman", "wedge"}) {
    const auto r = render_object(shapes::make_shape(name));
    Rng rng(substream_seed(11, name));
    for (int i = 0; i < 5; ++i) {
      const ContactPose p{rng.uniform(-5, 5), rng.uniform(-5, 5),
                          rng.uniform(-1, 1), rng.uniform(-90, 90)};
      const ControlImage out = apply_pose(r.depth, r.mask, p, cal, name);
      CHECK(alignment_error(out, p, cal) < 5.0);
    }
  }
}

TEST_CASE("doubling mm_per_pixel in calibration surfaces a 25 px error") {
  const auto r = render_object(shapes::make_cuboid(), 512, 0.1);
  auto cal = testutil::test_calibration(512, 0.1);
  const ContactPose p{5, 0, 0, 0};
  const ControlImage out = apply_pose(r.depth, r.mask, p, cal, "cuboid");

  auto miscal = cal;
  miscal.mm_per_pixel_x = 0.2;
  miscal.mm_per_pixel_y = 0.2;
  const double err = alignment_error(out, p, miscal);
  CHECK(err == Catch::Approx(25.0).margin(1.5));
}

TEST_CASE("empty mask and degenerate scale raise the documented errors") {
  const auto r = render_object(shapes::make_cuboid(), 128, 0.3);
  const auto cal = testutil::test_calibration(128, 0.3);
  ObjectMask empty(r.mask.width, r.mask.height);
  CHECK_THROWS_AS(apply_pose(r.depth, empty, ContactPose{}, cal), Error);

  auto steep = cal;
  steep.z_scale_gain = 2.0;  // 1 + 2*(-1) <= 0
  try {
    apply_pose(r.depth, r.mask, {0, 0, -1, 0}, steep);
    FAIL("expected degenerate-scale error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateScale);
  }
}

TEST_CASE("yaw forward and back recovers the mask") {
  const auto r = render_object(shapes::make_sphere(14.0, 1.9));
  const auto cal = testutil::test_calibration();
  for (double theta : {30.0, 65.0, 90.0}) {
    const ControlImage fwd =
        apply_pose(r.depth, r.mask, {0, 0, 0, theta}, cal, "sphere");
    DepthMap fwd_d;
    fwd_d.img = fwd.img;
    const ObjectMask fwd_mask = extract_mask(fwd.img, 0.01f);
    const ControlImage back =
        apply_pose(fwd_d, fwd_mask, {0, 0, 0, -theta}, cal, "sphere");
    const ObjectMask m0 = r.mask;
    const ObjectMask m1 = extract_mask(back.img, 0.01f);
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < m0.v.size(); ++i) {
      inter += (m0.v[i] && m1.v[i]) ? 1 : 0;
      uni += (m0.v[i] || m1.v[i]) ? 1 : 0;
    }
    CHECK(static_cast<double>(inter) / uni > 0.99);
  }
}

TEST_CASE("mean intensity is monotone in indentation depth") {
  const auto r = render_object(shapes::make_sphere());
  const auto cal = testutil::test_calibration();
  double prev = -1.0;
  for (double z : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
    const ControlImage out =
        apply_pose(r.depth, r.mask, {1.0, -0.5, z, 20.0}, cal, "sphere");
    const ObjectMask m = extract_mask(out.img, 0.01f);
    double sum = 0.0;
    size_t n = 0;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < m.width; ++x)
        if (m.at(x, y)) {
          sum += out.img.at(x, y);
          ++n;
        }
    const double mean = sum / n;
    CHECK(mean >= prev - 1e-9);
    prev = mean;
  }
}

TEST_CASE("z = 0 preserves footprint area within 1 percent") {
  // threshold at half the plateau so the bilinear boundary skirt
  // contributes symmetrically
  const auto r = render_object(shapes::make_pacman());
  const auto cal = testutil::test_calibration();
  const float threshold = 0.3f;
  const double area0 =
      static_cast<double>(extract_mask(r.depth, threshold).count());
  const ControlImage out =
      apply_pose(r.depth, r.mask, {2.0, -3.0, 0.0, 47.0}, cal, "pacman");
  const double area1 =
      static_cast<double>(extract_mask(out.img, threshold).count());
  CHECK(std::abs(area1 - area0) < 0.01 * area0);
}

TEST_CASE("build_control_set produces a manifest and a rejects report") {
  testutil::TempDir tmp("control_build");
  const TriangleMesh mesh = shapes::make_cuboid();
  const auto cal = testutil::test_calibration();
  ControlBuildOptions opt;
  opt.camera = testutil::test_camera();

  SECTION("empty log succeeds with an empty manifest") {
    PoseLogParse parsed;
    const auto result =
        build_control_set(mesh, parsed, cal, tmp.path, "cuboid", opt);
    CHECK(result.accepted.empty());
    CHECK(result.rejects.empty());
    CHECK(std::filesystem::exists(result.manifest_path));
  }

  SECTION("one bad row goes to rejects, the rest are produced") {
    const auto parsed = parse_pose_log_lenient(bytes_of(
        "frame,x,y,z,yaw\n0,0,0,0,0\n1,9.5,0,0,0\n2,-2.5,1.5,0.25,-30\n"));
    REQUIRE(parsed.row_errors.size() == 1);
    const auto result =
        build_control_set(mesh, parsed, cal, tmp.path, "cuboid", opt);
    CHECK(result.accepted.size() == 2);
    REQUIRE(result.rejects.size() == 1);
    CHECK(result.rejects[0].frame == 1);
    for (const auto& rec : result.accepted) {
      CHECK(rec.alignment_error_px < 5.0);
      CHECK(std::filesystem::exists(tmp.path / rec.image_path));
    }
    // round-trip one control image through the 16-bit PNG
    const ImageF back =
        png::load_gray16(tmp.path / result.accepted[0].image_path);
    CHECK(back.width == 512);
  }

  SECTION("manifest is ordered by frame id and threading does not change it") {
    const auto parsed = parse_pose_log_lenient(
        bytes_of("frame,x,y,z,yaw\n5,1,1,0,10\n1,-1,2,0,-5\n3,0,0,0.5,60\n"));
    auto opt2 = opt;
    opt2.threads = 3;
    const auto a = build_control_set(mesh, parsed, cal, tmp.path, "a", opt2);
    REQUIRE(a.accepted.size() == 3);
    CHECK(a.accepted[0].frame == 1);
    CHECK(a.accepted[1].frame == 3);
    CHECK(a.accepted[2].frame == 5);
    auto opt1 = opt;
    opt1.threads = 1;
    const auto b = build_control_set(mesh, parsed, cal, tmp.path, "b", opt1);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(a.accepted[i].frame == b.accepted[i].frame);
      CHECK(a.accepted[i].alignment_error_px ==
            b.accepted[i].alignment_error_px);
    }
  }
}
