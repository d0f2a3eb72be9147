#include "nbvsdf/config.hpp"
#include "nbvsdf/oracle.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace nbvsdf;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("nbvsdf_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(SceneSdf, PrimitiveValues) {
  const SceneNode s = SceneNode::sphere(Vec3(0.1, 0, 0), 0.5);
  EXPECT_NEAR(scene_sdf(s, Vec3(0.1, 0, 0)), -0.5, 1e-15);
  EXPECT_NEAR(scene_sdf(s, Vec3(0.1, 0, 0.8)), 0.3, 1e-15);
  const SceneNode b = SceneNode::box(Vec3::Zero(), Vec3(0.2, 0.3, 0.4));
  EXPECT_NEAR(scene_sdf(b, Vec3(0.5, 0, 0)), 0.3, 1e-15);
  EXPECT_NEAR(scene_sdf(b, Vec3(0.5, 0.7, 0)), std::hypot(0.3, 0.4), 1e-15);
  EXPECT_NEAR(scene_sdf(b, Vec3::Zero()), -0.2, 1e-15);
  const SceneNode t = SceneNode::torus(Vec3::Zero(), 0.5, 0.1);
  EXPECT_NEAR(scene_sdf(t, Vec3(0.5, 0, 0)), -0.1, 1e-15);
  EXPECT_NEAR(scene_sdf(t, Vec3::Zero()), 0.4, 1e-15);
  EXPECT_NEAR(scene_sdf(t, Vec3(0, 0.5, 0.3)), 0.2, 1e-15);
}

TEST(SceneSdf, CombinatorValues) {
  const SceneNode a = SceneNode::sphere(Vec3(-0.3, 0, 0), 0.2), b = SceneNode::sphere(Vec3(0.3, 0, 0), 0.2);
  const Vec3 x(0.0, 0.1, 0.0);
  const double fa = scene_sdf(a, x), fb = scene_sdf(b, x);
  EXPECT_NEAR(scene_sdf(SceneNode::make_union({a, b}), x), std::min(fa, fb), 1e-15);
  EXPECT_NEAR(scene_sdf(SceneNode::make_intersection({a, b}), x), std::max(fa, fb), 1e-15);
  EXPECT_LE(scene_sdf(SceneNode::smooth_union(a, b, 0.1), x), std::min(fa, fb));
  EXPECT_NEAR(scene_sdf(SceneNode::smooth_union(a, b, 0.1), Vec3(-0.3, 0, 0)), -0.2, 1e-12);
  const SceneNode moved = SceneNode::transform(SceneNode::box(Vec3::Zero(), Vec3(0.4, 0.1, 0.1)),
                                               Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix(),
                                               Vec3(0, 0, 0.2));
  EXPECT_NEAR(scene_sdf(moved, Vec3(0, 0.3, 0.2)), -0.1, 1e-12);
  EXPECT_NEAR(scene_sdf(moved, Vec3(0.3, 0, 0.2)), 0.2, 1e-12);
}

TEST(ScenePresets, ContainOriginRegionAndFitBounds) {
  for (const std::string name : {"sphere", "sphere_box", "cavity"}) {
    const AnalyticScene s = scene_preset(name);
    EXPECT_NO_THROW(s.validate());
    // Entire surface lies well inside the unit bounding sphere.
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
      Vec3 d(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
      EXPECT_GT(scene_sdf(s, 0.9 * d.normalized()), 0.0) << name;
    }
  }
  EXPECT_THROW(scene_preset("teapot"), Error);
}

TEST(Capture, DepthNormalAndMaskOnSphere) {
  AnalyticScene scene = scene_preset("sphere");
  const CameraView v = CameraView::look_at(Vec3(0, -2.5, 0), Vec3::Zero(), 33, 33, 40.0);
  const CaptureRecord c = capture(scene, v);
  // Center pixel: ray straight at the origin hits at distance D - r.
  EXPECT_NEAR(c.depth.at(16, 16, 0), 2.0, 2e-4);
  EXPECT_EQ(c.mask.at(16, 16, 0), 1.0f);
  EXPECT_LT((c.normal.vec3(16, 16) - Vec3(0, -1, 0)).norm(), 1e-3);
  EXPECT_EQ(c.mask.at(0, 0, 0), 0.0f);
  EXPECT_LT((c.rgb.vec3(0, 0) - scene.background).norm(), 1e-6);
  EXPECT_EQ(c.normal.vec3(0, 0), Vec3::Zero());
}

TEST(Capture, HitsReprojectOntoTheirPixelsAndSurface) {
  const AnalyticScene scene = scene_preset("sphere_box");
  const CameraView v = CameraView::look_at(Vec3(1.5, -1.8, 0.9), Vec3::Zero(), 40, 30, 40.0);
  const CaptureRecord c = capture(scene, v);
  int hits = 0;
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) {
      if (c.mask.at(x, y, 0) < 0.5f) continue;
      ++hits;
      const Ray r = generate_ray(v, x + 0.5, y + 0.5);
      const Vec3 p = r.origin + static_cast<double>(c.depth.at(x, y, 0)) * r.direction;
      EXPECT_LT(std::abs(scene_sdf(scene, p)), 2e-4);
      const auto px = v.project(p);
      ASSERT_TRUE(px);
      EXPECT_NEAR(px->x(), x + 0.5, 1e-3);
      EXPECT_NEAR(px->y(), y + 0.5, 1e-3);
      EXPECT_LT((c.normal.vec3(x, y) - scene_normal(scene, p)).norm(), 1e-3);
      EXPECT_LT(c.normal.vec3(x, y).dot(r.direction), 0.0);
    }
  EXPECT_GT(hits, 100);
}

TEST(Capture, RigidMotionOfSceneAndCameraPreservesImages) {
  const AnalyticScene scene = scene_preset("sphere_box");
  const Mat3 R = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 t(0.05, 0.02, -0.04);
  const CameraView v = CameraView::look_at(Vec3(1.5, -1.8, 0.9), Vec3::Zero(), 24, 24, 40.0);
  CameraView mv = v;
  mv.rotation = v.rotation * R.transpose();
  mv.translation = v.translation - mv.rotation * t;
  const CaptureRecord a = capture(scene, v), b = capture(transformed(scene, R, t), mv);
  int differing = 0;
  for (std::size_t i = 0; i < a.rgb.data.size(); ++i)
    if (std::abs(a.rgb.data[i] - b.rgb.data[i]) > 1e-3) ++differing;
  EXPECT_LE(differing, 6);  // checker-edge pixels may flip
}

TEST(SimulatorOracle, RevealsOnlyRequestedPoses) {
  SimulatorOracle o(scene_preset("sphere"), ring_poses(6, 20, 2.5, 8, 8, 40));
  EXPECT_TRUE(o.revealed().empty());
  const CaptureRecord a = o.capture(2);
  EXPECT_EQ(o.revealed(), std::set<std::size_t>{2});
  const CaptureRecord b = o.capture(2);
  EXPECT_EQ(o.revealed().size(), 1u);
  EXPECT_EQ(a.rgb.data, b.rgb.data);
  o.pose(4);  // querying poses reveals nothing
  EXPECT_EQ(o.revealed().size(), 1u);
  EXPECT_THROW(o.capture(6), Error);
  EXPECT_TRUE(o.has_normals());
}

TEST(DatasetOracle, RoundTripsWrittenCaptures) {
  const auto dir = temp_dir("dataset");
  const AnalyticScene scene = scene_preset("sphere_box");
  std::vector<CaptureRecord> recs;
  for (const CameraView& v : ring_poses(3, 20, 2.5, 16, 12, 40)) recs.push_back(capture(scene, v));
  write_dataset(dir, recs);
  DatasetOracle o(dir);
  ASSERT_EQ(o.pose_count(), 3u);
  EXPECT_TRUE(o.has_normals());
  for (std::size_t i = 0; i < 3; ++i) {
    const CameraView p = o.pose(i);
    EXPECT_LT((p.rotation - recs[i].view.rotation).norm(), 1e-9);
    EXPECT_LT((p.translation - recs[i].view.translation).norm(), 1e-9);
    EXPECT_EQ(p.width, 16);
    const CaptureRecord c = o.capture(i);
    for (std::size_t k = 0; k < c.rgb.data.size(); ++k) EXPECT_NEAR(c.rgb.data[k], recs[i].rgb.data[k], 0.5 / 255 + 1e-6);
    for (std::size_t k = 0; k < c.normal.data.size(); ++k) EXPECT_EQ(c.normal.data[k], recs[i].normal.data[k]);
    EXPECT_EQ(c.mask.data, recs[i].mask.data);
  }
  EXPECT_EQ(o.revealed().size(), 3u);
  EXPECT_THROW(o.capture(3), Error);
  std::filesystem::remove_all(dir);
}

TEST(DatasetOracle, MissingDirectoryFails) {
  EXPECT_THROW(DatasetOracle(temp_dir("missing")), Error);
}
