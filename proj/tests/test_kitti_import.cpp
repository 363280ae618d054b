#include <gtest/gtest.h>

#include "mrsim/frame_source.hpp"

// tests/data/kitti_mini is a four-image KITTI-style drive (the last image has
// no depth map). ctest converts it with tools/kitti_to_stream.py before this
// runs; the result must load exactly like a stream written natively from the
// frames the fixture encodes.

namespace mrsim {
namespace {

namespace fs = std::filesystem;

std::vector<FrameRGBD> expected_frames() {
  CameraModel cam;
  cam.width = 24;
  cam.height = 12;
  cam.fx = cam.fy = 20;
  cam.cx = 12;
  cam.cy = 6;
  std::vector<FrameRGBD> out;
  for (int k = 0; k < 3; ++k) {
    FrameRGBD f;
    f.cam = cam;
    f.color = ImageRgb8(cam.width, cam.height);
    f.depth = ImageF(cam.width, cam.height);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        f.color.at(x, y, 0) = static_cast<std::uint8_t>(10 * x);
        f.color.at(x, y, 1) = static_cast<std::uint8_t>(20 * y);
        f.color.at(x, y, 2) = static_cast<std::uint8_t>(7 * k);
        f.depth.at(x, y) = x < 20 ? 2.0f + 0.25f * static_cast<float>(x) : 0.0f;
      }
    // KITTI moves along camera z; that is world x here, camera 1.65 m up.
    f.cam_pose = vehicle_camera_pose(Pose2(0.5 * k, 0, 0), 1.65, 0.0);
    f.timestamp = 0.1 * k;
    out.push_back(std::move(f));
  }
  return out;
}

TEST(KittiImport, ConvertedStreamLoadsLikeNative) {
  const fs::path native_dir = fs::temp_directory_path() / "mrsim_kitti_native";
  fs::remove_all(native_dir);
  write_stream(native_dir, expected_frames());

  const auto converted = ingest_stream(MRSIM_KITTI_STREAM);
  const auto native = ingest_stream(native_dir);
  EXPECT_TRUE(converted.camera() == native.camera());
  ASSERT_EQ(converted.frame_count(), 3);
  ASSERT_EQ(native.frame_count(), 3);
  for (long i = 0; i < 3; ++i) {
    SCOPED_TRACE(i);
    const auto a = converted.load(i);
    const auto b = native.load(i);
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_NEAR(a.timestamp, b.timestamp, 1e-12);
    EXPECT_TRUE(a.cam_pose.rotation.isApprox(b.cam_pose.rotation, 1e-12));
    EXPECT_LT((a.cam_pose.translation - b.cam_pose.translation).norm(), 1e-12);
  }
}

TEST(KittiImport, ReplayPicksFramesByRecordedTime) {
  auto src = ingest_stream(MRSIM_KITTI_STREAM);
  EXPECT_EQ(src.index_at(0.0), 0);
  EXPECT_EQ(src.index_at(0.15), 1);
  EXPECT_EQ(src.index_at(5.0), 2);
  const auto f = src.frame(40, 0.2, Pose3());
  EXPECT_EQ(f.color.at(0, 0, 2), 14);
  // Columns past the depth annotation stay invalid.
  EXPECT_EQ(f.depth.at(23, 5), 0.0f);
  EXPECT_EQ(f.depth.at(4, 5), 3.0f);
}

}  // namespace
}  // namespace mrsim
