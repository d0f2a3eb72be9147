#include "nbvsdf/config.hpp"
#include "nbvsdf/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace nbvsdf;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nbvsdf_test_" + name);
}

Image ramp(int w, int h, int c) {
  Image img(w, h, c);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>((i * 37 % 256) / 255.0);
  return img;
}

}  // namespace

TEST(Png, RoundTripIsExactOnEightBitValues) {
  for (int c : {1, 3}) {
    const Image a = ramp(13, 7, c);
    const auto p = temp_path("rt.png");
    write_png(p, a);
    const Image b = read_png(p);
    ASSERT_TRUE(a.same_shape(b));
    for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-6);
    std::filesystem::remove(p);
  }
  EXPECT_THROW(read_png(temp_path("missing.png")), Error);
}

TEST(Pfm, RoundTripIsBitExact) {
  for (int c : {1, 3}) {
    Image a(9, 5, c);
    Rng rng(1);
    for (float& v : a.data) v = static_cast<float>(rng.uniform(-3, 3));
    const auto p = temp_path("rt.pfm");
    write_pfm(p, a);
    const Image b = read_pfm(p);
    EXPECT_TRUE(a.same_shape(b));
    EXPECT_EQ(a.data, b.data);
    std::filesystem::remove(p);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  HashGridConfig g;
  g.levels = 5;
  g.table_size = 1u << 11;
  FieldParams p = FieldParams::initialize(g, 3);
  p.tau_raw = 4.25f;
  const auto path = temp_path("rt.ckpt");
  save_checkpoint(path, p, 1234, 3.5);
  const Checkpoint c = load_checkpoint(path);
  EXPECT_EQ(c.iteration, 1234);
  EXPECT_EQ(c.psi, 3.5);
  EXPECT_EQ(c.params.grid.levels, 5);
  EXPECT_EQ(c.params.grid.table_size, g.table_size);
  EXPECT_EQ(c.params.table, p.table);
  EXPECT_EQ(c.params.tau_raw, p.tau_raw);
  ASSERT_EQ(c.params.sdf_decoder.size(), p.sdf_decoder.size());
  for (std::size_t l = 0; l < p.sdf_decoder.size(); ++l) {
    EXPECT_EQ(c.params.sdf_decoder[l].weight, p.sdf_decoder[l].weight);
    EXPECT_EQ(c.params.sdf_decoder[l].bias, p.sdf_decoder[l].bias);
  }
  for (std::size_t l = 0; l < p.color_decoder.size(); ++l)
    EXPECT_EQ(c.params.color_decoder[l].weight, p.color_decoder[l].weight);
  EXPECT_EQ(sdf(Vec3(0.1, 0.2, 0.3), c.params, 5.0), sdf(Vec3(0.1, 0.2, 0.3), p, 5.0));
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  HashGridConfig g;
  g.levels = 2;
  g.table_size = 1u << 10;
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(path, FieldParams::initialize(g, 0), 0, 0.0);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

TEST(RunConfig, DefaultsMatchReferenceSettings) {
  const RunConfig c = RunConfig::parse("{}");
  const ReconstructionConfig& r = c.reconstruction;
  EXPECT_EQ(r.grid.levels, 12);
  EXPECT_EQ(r.grid.channels, 2);
  EXPECT_EQ(r.grid.table_size, 1u << 19);
  EXPECT_EQ(r.grid.base_resolution, 16);
  EXPECT_DOUBLE_EQ(r.grid.growth_factor, 1.38);
  EXPECT_EQ(r.train.batch_rays, 1024);
  EXPECT_EQ(r.train.uniform_points, 1024);
  EXPECT_EQ(r.train.total_iters, 15000);
  EXPECT_EQ(r.train.schedule.threshold, 10000);
  EXPECT_DOUBLE_EQ(r.train.delta, 50.0);
  EXPECT_DOUBLE_EQ(r.train.weights.normal, 0.05);
  EXPECT_DOUBLE_EQ(r.train.weights.eikonal, 0.1);
  EXPECT_DOUBLE_EQ(r.train.weights.dir_hessian, 0.05);
  EXPECT_EQ(r.train.render.n_coarse, 64);
  EXPECT_EQ(r.train.render.n_importance, 32);
  EXPECT_EQ(r.budget, 8u);
  EXPECT_EQ(r.initial_views, 3u);
  EXPECT_EQ(r.plan_interval, 1000);
  EXPECT_EQ(r.policy, Policy::Planning);
  EXPECT_FALSE(r.planner.render.jitter);
  EXPECT_EQ(c.candidates.generate().size(), 40u);
}

TEST(RunConfig, ParsesSectionsAndRoundTrips) {
  const RunConfig c = RunConfig::parse(R"({
    "scene": {"preset": "cavity"}, "budget": 5, "policy": "farthest", "seed": 7,
    "grid": {"levels": 8, "log2_table_size": 14},
    "train": {"batch_rays": 128, "total_iters": 900, "weights": {"eikonal": 0.2}},
    "render": {"n_coarse": 16, "n_importance": 8},
    "schedule": {"plan_interval": 100},
    "planner": {"resolution": 32}
  })");
  EXPECT_EQ(c.reconstruction.budget, 5u);
  EXPECT_EQ(c.reconstruction.policy, Policy::Farthest);
  EXPECT_EQ(c.reconstruction.grid.levels, 8);
  EXPECT_EQ(c.reconstruction.train.schedule.levels, 8);
  EXPECT_EQ(c.reconstruction.grid.table_size, 1u << 14);
  EXPECT_DOUBLE_EQ(c.reconstruction.train.weights.eikonal, 0.2);
  EXPECT_DOUBLE_EQ(c.reconstruction.train.weights.normal, 0.05);
  EXPECT_EQ(c.reconstruction.planner.render.n_coarse, 16);
  EXPECT_EQ(c.reconstruction.planner.resolution, 32);
  const std::string once = c.to_json();
  EXPECT_EQ(RunConfig::parse(once).to_json(), once);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::parse(R"({"bugdet": 8})"), Error);
  EXPECT_THROW(RunConfig::parse(R"({"train": {"lr": 0.1}})"), Error);
  EXPECT_THROW(RunConfig::parse(R"({"budget": "eight"})"), Error);
  EXPECT_THROW(RunConfig::parse(R"({"policy": "greedy"})"), Error);
  EXPECT_THROW(RunConfig::parse(R"({"budget": 2})"), Error);            // fewer than the initial views
  EXPECT_THROW(RunConfig::parse(R"({"budget": 50})"), Error);           // more than the candidates
  EXPECT_THROW(RunConfig::parse(R"({"train": {"total_iters": 5000}})"), Error);  // last addition at 5000
  EXPECT_THROW(RunConfig::parse(R"({"scene": {"preset": "teapot"}})"), Error);
  EXPECT_THROW(RunConfig::parse("{"), Error);
  try {
    RunConfig::parse(R"({"train": {"weights": {"eikonall": 1}}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("eikonall"), std::string::npos);
  }
}

TEST(ParseScene, CsgNodesAndRigidMotion) {
  const AnalyticScene s = parse_scene(R"({
    "root": {"type": "union", "children": [
      {"type": "sphere", "center": [0.2, 0, 0], "radius": 0.3},
      {"type": "box", "center": [-0.3, 0, 0], "half_extents": [0.1, 0.1, 0.1]}]},
    "translation": [0, 0, 0.1]
  })");
  EXPECT_NEAR(scene_sdf(s, Vec3(0.2, 0, 0.1)), -0.3, 1e-12);
  EXPECT_NEAR(scene_sdf(s, Vec3(-0.3, 0, 0.1)), -0.1, 1e-12);
  EXPECT_THROW(parse_scene(R"({"root": {"type": "cone"}})"), Error);
  EXPECT_THROW(parse_scene(R"({"root": {"type": "sphere", "radius": -1}})"), Error);
}

TEST(PoseSamplers, RingAndHemisphereGeometry) {
  const auto ring = ring_poses(8, 30.0, 2.5, 16, 16, 40.0);
  ASSERT_EQ(ring.size(), 8u);
  for (const CameraView& v : ring) {
    EXPECT_NEAR(v.center().norm(), 2.5, 1e-12);
    EXPECT_NEAR(v.center().z(), 2.5 * std::sin(30.0 * M_PI / 180.0), 1e-12);
    const auto px = v.project(Vec3::Zero());
    ASSERT_TRUE(px);
    EXPECT_NEAR(px->x(), 8.0, 1e-9);
  }
  const auto hemi = hemisphere_poses(20, 2.0, 8, 8, 40.0);
  ASSERT_EQ(hemi.size(), 20u);
  for (const CameraView& v : hemi) {
    EXPECT_NEAR(v.center().norm(), 2.0, 1e-12);
    EXPECT_GT(v.center().z(), 0.0);
  }
}
