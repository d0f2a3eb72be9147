#include "nbvsdf/evalgeom.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace nbvsdf;

namespace {

TriangleMesh sphere_mesh(double r, int res, const Vec3& c = Vec3::Zero()) {
  return marching_cubes([r, c](const Vec3& x) { return (x - c).norm() - r; }, Aabb{}, res);
}

Image gradient_image(int w, int h, double phase) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = static_cast<float>(0.5 + 0.4 * std::sin(0.3 * x + 0.2 * y + phase + c));
  return img;
}

}  // namespace

TEST(MarchingCubes, NoSignChangeGivesEmptyMesh) {
  EXPECT_TRUE(marching_cubes([](const Vec3&) { return 1.0; }, Aabb{}, 8).empty());
  EXPECT_TRUE(marching_cubes([](const Vec3&) { return -1.0; }, Aabb{}, 8).empty());
}

TEST(MarchingCubes, PlaneVerticesLieOnPlane) {
  const TriangleMesh m = marching_cubes([](const Vec3& x) { return x.z() - 0.13; }, Aabb{}, 16);
  ASSERT_FALSE(m.empty());
  for (const Vec3& v : m.vertices) EXPECT_NEAR(v.z(), 0.13, 1e-12);
  EXPECT_NEAR(m.area(), 4.0, 1e-9);
}

TEST(MarchingCubes, SphereAreaVolumeAndOrientation) {
  const double r = 0.6;
  const TriangleMesh m = sphere_mesh(r, 64);
  EXPECT_NEAR(m.area(), 4 * M_PI * r * r, 0.02 * 4 * M_PI * r * r);
  EXPECT_NEAR(m.signed_volume(), 4.0 / 3.0 * M_PI * r * r * r, 0.02 * 4.0 / 3.0 * M_PI * r * r * r);
  for (const auto& t : m.triangles) {
    const Vec3 a = m.vertices[t[0]], b = m.vertices[t[1]], c = m.vertices[t[2]];
    const Vec3 n = (b - a).cross(c - a);
    EXPECT_GT(n.dot((a + b + c) / 3.0), 0.0);
  }
  for (const Vec3& v : m.vertices) EXPECT_NEAR(v.norm(), r, 0.01);
}

TEST(MarchingCubes, WatertightSharedEdges) {
  const TriangleMesh m = sphere_mesh(0.5, 24, Vec3(0.03, -0.02, 0.01));
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> edges;
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) {
      const auto a = t[static_cast<std::size_t>(k)], b = t[static_cast<std::size_t>((k + 1) % 3)];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  for (const auto& [e, n] : edges) EXPECT_EQ(n, 2);
}

TEST(SampleSurface, PointsOnSurfaceAndSeeded) {
  const TriangleMesh m = sphere_mesh(0.5, 32);
  const auto a = sample_surface(m, 500, 3), b = sample_surface(m, 500, 3);
  ASSERT_EQ(a.size(), 500u);
  EXPECT_EQ(a, b);
  for (const Vec3& p : a) EXPECT_NEAR(p.norm(), 0.5, 0.01);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : a) mean += p / 500.0;
  EXPECT_LT(mean.norm(), 0.05);
  EXPECT_THROW(sample_surface(TriangleMesh{}, 10, 0), Error);
}

TEST(PointIndex, MatchesBruteForce) {
  Rng rng(4);
  std::vector<Vec3> pts;
  for (int i = 0; i < 700; ++i) pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-0.2, 0.2), rng.normal(0, 0.3));
  const PointIndex index(pts);
  for (int q = 0; q < 300; ++q) {
    const Vec3 x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    double best = 1e300;
    for (const Vec3& p : pts) best = std::min(best, (p - x).norm());
    EXPECT_DOUBLE_EQ(index.nearest(x), best);
  }
}

TEST(Chamfer, KnownValuesAndSymmetry) {
  const std::vector<Vec3> a{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  const std::vector<Vec3> b{Vec3(0, 0, 0.1), Vec3(1, 0, 0.3)};
  EXPECT_NEAR(chamfer_points(a, b), 0.2, 1e-15);
  EXPECT_NEAR(chamfer_points(a, a), 0.0, 0.0);
  const std::vector<Vec3> c{Vec3(0, 0, 0)};
  // a->c: (0 + 1)/2, c->a: 0
  EXPECT_NEAR(chamfer_points(a, c), 0.25, 1e-15);
  EXPECT_EQ(chamfer_points(a, c), chamfer_points(c, a));
}

TEST(Chamfer, MeshDistances) {
  const TriangleMesh s = sphere_mesh(0.5, 48);
  EXPECT_LT(chamfer(s, s, 4000, 1), 1e-12);
  // Concentric spheres: every nearest distance is about the radial gap.
  const TriangleMesh big = sphere_mesh(0.6, 48);
  EXPECT_NEAR(chamfer(s, big, 4000, 1), 0.1, 0.005);
  const TriangleMesh shifted = sphere_mesh(0.5, 48, Vec3(0.05, 0, 0));
  const double d = chamfer(s, shifted, 4000, 2);
  EXPECT_GT(d, 0.01);
  EXPECT_LT(d, 0.05);
  EXPECT_NEAR(chamfer(shifted, s, 4000, 2), d, 0.003);
}

TEST(Psnr, KnownValues) {
  const Image a(8, 8, 3, 0.5f);
  EXPECT_EQ(psnr(a, a), 99.0);
  const Image b(8, 8, 3, 0.6f);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);
  EXPECT_THROW(psnr(a, Image(8, 7, 3)), Error);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  const Image a = gradient_image(24, 20, 0.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, MatchesReferenceImplementation) {
  // Frozen from skimage.metrics.structural_similarity(gaussian_weights=True,
  // sigma=1.5, use_sample_covariance=False, data_range=1, channel_axis=-1).
  const Image a = gradient_image(32, 24, 0.0), b = gradient_image(32, 24, 0.35);
  EXPECT_NEAR(ssim(a, b), 0.8724988107255486, 1e-5);
}

TEST(Ssim, DecreasesWithNoise) {
  const Image a = gradient_image(32, 32, 0.0);
  double prev = 1.0;
  for (double sigma : {0.02, 0.05, 0.1, 0.2}) {
    Image n = a;
    Rng rng(5);
    for (float& v : n.data) v = static_cast<float>(v + rng.normal(0, sigma));
    const double s = ssim(a, n);
    EXPECT_LT(s, prev);
    prev = s;
  }
  EXPECT_THROW(ssim(a, Image(32, 31, 3)), Error);
  EXPECT_THROW(ssim(Image(8, 8, 3), Image(8, 8, 3)), Error);
}
