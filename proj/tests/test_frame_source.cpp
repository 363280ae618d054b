#include <gtest/gtest.h>

#include "mrsim/frame_source.hpp"

namespace mrsim {
namespace {

namespace fs = std::filesystem;

CameraModel small_camera() {
  CameraModel c;
  c.width = 32;
  c.height = 18;
  c.fx = c.fy = 16;
  c.cx = 16;
  c.cy = 9;
  return c;
}

std::vector<FrameRGBD> three_frames() {
  SyntheticWorld w;
  w.boxes.push_back(RealBox{Obb2{Pose2(6, 0, 0), 0.5, 0.5}, 0.0, 1.0, Rgb(0.2, 0.4, 0.9)});
  std::vector<FrameRGBD> out;
  for (int i = 0; i < 3; ++i) {
    auto f = render_synthetic(w, vehicle_camera_pose(Pose2(0.5 * i, 0, 0), 1.5, 0.1), small_camera());
    f.timestamp = 0.1 * i;
    out.push_back(std::move(f));
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mrsim_fs_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Stream, RoundTrip) {
  const auto dir = scratch("roundtrip");
  const auto frames = three_frames();
  write_stream(dir, frames);
  auto src = ingest_stream(dir);
  ASSERT_EQ(src.frame_count(), 3);
  EXPECT_EQ(src.camera(), small_camera());
  EXPECT_TRUE(src.replay());
  for (long i = 0; i < 3; ++i) {
    const auto f = src.load(i);
    EXPECT_EQ(f.color, frames[i].color);
    EXPECT_EQ(f.depth, frames[i].depth);
    EXPECT_DOUBLE_EQ(f.timestamp, frames[i].timestamp);
    EXPECT_TRUE(f.cam_pose.translation.isApprox(frames[i].cam_pose.translation, 1e-12));
    EXPECT_TRUE(f.cam_pose.rotation.isApprox(frames[i].cam_pose.rotation, 1e-9));
  }
}

TEST(Stream, ReplayHoldsLastFrame) {
  const auto dir = scratch("hold");
  const auto frames = three_frames();
  write_stream(dir, frames);
  auto src = ingest_stream(dir);
  const auto f = src.frame(10, 1.0, Pose3{});
  EXPECT_EQ(f.color, frames[2].color);
  EXPECT_EQ(f.timestamp, 1.0);
}

TEST(Stream, FramesFollowRecordedTime) {
  const auto dir = scratch("bytime");
  const auto frames = three_frames();  // recorded at t = 0, 0.1, 0.2
  write_stream(dir, frames);
  auto src = ingest_stream(dir);
  EXPECT_EQ(src.index_at(0.0), 0);
  EXPECT_EQ(src.index_at(0.05), 0);
  EXPECT_EQ(src.index_at(0.1), 1);
  EXPECT_EQ(src.index_at(0.15), 1);
  EXPECT_EQ(src.index_at(7.0), 2);
  EXPECT_EQ(src.frame(0, 0.1, Pose3{}).color, frames[1].color);
}

TEST(Stream, WrongDepthLengthNamesFile) {
  const auto dir = scratch("badlen");
  write_stream(dir, three_frames());
  const auto bad = dir / "depth" / detail::frame_name(1, "bin");
  auto bytes = read_file_bytes(bad);
  bytes.resize(bytes.size() - 4);
  write_file_bytes(bad, bytes);
  try {
    ingest_stream(dir);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(detail::frame_name(1, "bin")), std::string::npos) << e.what();
  }
}

TEST(Stream, MissingColorFrameRejected) {
  const auto dir = scratch("missing");
  write_stream(dir, three_frames());
  fs::remove(dir / "color" / detail::frame_name(2, "png"));
  EXPECT_THROW(ingest_stream(dir), IoError);
}

TEST(Stream, PoseCountMismatchRejected) {
  const auto dir = scratch("count");
  write_stream(dir, three_frames());
  auto csv = read_text_file(dir / "poses.csv");
  csv.erase(csv.rfind('\n', csv.size() - 2) + 1);
  write_text_file(dir / "poses.csv", csv);
  EXPECT_THROW(ingest_stream(dir), IoError);
}

TEST(Stream, MissingManifestRejected) { EXPECT_THROW(ingest_stream(scratch("none")), IoError); }

TEST(Synthetic, DepthIsCameraZ) {
  // Camera looking straight down the +x axis at 1 m height, level.
  const auto cam = small_camera();
  SyntheticWorld w;
  w.boxes.push_back(RealBox{Obb2{Pose2(10.5, 0, 0), 0.5, 5.0}, 0.0, 3.0, Rgb(1, 1, 1)});
  const auto f = render_synthetic(w, vehicle_camera_pose(Pose2(0, 0, 0), 1.0, 0.0), cam);
  // Every pixel that hits the wall face reports depth 10 regardless of its ray angle.
  int wall = 0;
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const double d = f.depth.at(u, v);
      if (std::abs(d - 10.0) < 1e-6) ++wall;
    }
  }
  EXPECT_GT(wall, cam.width * 2);
  // Sky above the 3 m wall top is at the horizon row and up: depth 0.
  EXPECT_EQ(f.depth.at(0, 0), 0.0f);
}

}  // namespace
}  // namespace mrsim
