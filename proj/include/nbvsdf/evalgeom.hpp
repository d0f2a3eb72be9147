#pragma once

// Surface extraction and reconstruction metrics.

#include "nbvsdf/field.hpp"

#include <array>
#include <filesystem>

namespace nbvsdf {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  double area() const;
  /// Volume enclosed by a closed mesh; positive for outward-facing triangles.
  double signed_volume() const;
};

/// Scalar samples on the (R+1)^3 lattice of a box, x fastest.
struct ScalarGrid {
  int resolution = 0;  // cells per axis
  Aabb bounds;
  std::vector<double> values;

  Vec3 point(int i, int j, int k) const;
  double at(int i, int j, int k) const {
    const auto n = static_cast<std::size_t>(resolution + 1);
    return values[(static_cast<std::size_t>(k) * n + static_cast<std::size_t>(j)) * n + static_cast<std::size_t>(i)];
  }
};

ScalarGrid sample_grid(const std::function<double(const Vec3&)>& fn, const Aabb& bounds, int resolution);
/// Learned SDF at full bandwidth on the lattice.
ScalarGrid sample_grid(const FieldParams& params, int resolution);

/// Zero level set with the 256-case table. Negative values are inside and
/// triangles face outward. Returns an empty mesh when no cell changes sign.
TriangleMesh marching_cubes(const ScalarGrid& grid);
TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& fn, const Aabb& bounds,
                            int resolution);

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

/// n points distributed uniformly by area.
std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// 0.5 * (mean nearest distance a->b + mean nearest distance b->a).
double chamfer_points(std::span<const Vec3> a, std::span<const Vec3> b);
double chamfer(const TriangleMesh& a, const TriangleMesh& b, std::size_t n_samples, std::uint64_t seed);

/// Exact nearest-neighbor queries over a fixed point set via a uniform grid.
class PointIndex {
 public:
  explicit PointIndex(std::span<const Vec3> points);
  /// Distance from q to the nearest indexed point.
  double nearest(const Vec3& q) const;

 private:
  std::vector<Vec3> points_;
  Vec3 origin_;
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::uint32_t> start_;  // cell -> first index into order_
  std::vector<std::uint32_t> order_;

  std::array<int, 3> cell_of(const Vec3& p) const;
};

/// 10 log10(1 / MSE) over all channels, capped at 99 dB.
double psnr(const Image& a, const Image& b);
/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over
/// channels; K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim(const Image& a, const Image& b);

}  // namespace nbvsdf
