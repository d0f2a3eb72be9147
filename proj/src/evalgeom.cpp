#include "nbvsdf/evalgeom.hpp"

#include "nbvsdf/detail/mc_tables.hpp"
#include "nbvsdf/io.hpp"

#include <cmath>
#include <algorithm>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace nbvsdf {

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

}  // namespace

double TriangleMesh::area() const {
  double acc = 0.0;
  for (const auto& t : triangles) acc += triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
  return acc;
}

double TriangleMesh::signed_volume() const {
  double acc = 0.0;
  for (const auto& t : triangles) acc += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
  return acc / 6.0;
}

Vec3 ScalarGrid::point(int i, int j, int k) const {
  const Vec3 step = bounds.extent() / resolution;
  return bounds.min + Vec3(i * step.x(), j * step.y(), k * step.z());
}

ScalarGrid sample_grid(const std::function<double(const Vec3&)>& fn, const Aabb& bounds, int resolution) {
  if (resolution < 8) throw Error("marching cubes: resolution must be >= 8");
  ScalarGrid g;
  g.resolution = resolution;
  g.bounds = bounds;
  const auto n = static_cast<std::size_t>(resolution + 1);
  g.values.resize(n * n * n);
  parallel_for(n, [&](std::size_t k) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i)
        g.values[(k * n + j) * n + i] =
            fn(g.point(static_cast<int>(i), static_cast<int>(j), static_cast<int>(k)));
  });
  return g;
}

ScalarGrid sample_grid(const FieldParams& params, int resolution) {
  if (resolution < 8) throw Error("marching cubes: resolution must be >= 8");
  ScalarGrid g;
  g.resolution = resolution;
  g.bounds = params.grid.bounds;
  const auto n = static_cast<std::size_t>(resolution + 1);
  g.values.resize(n * n * n);
  const double psi = static_cast<double>(params.grid.levels);
  parallel_for(n, [&](std::size_t k) {
    std::vector<Vec3> pts;
    pts.reserve(n * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i)
        pts.push_back(g.point(static_cast<int>(i), static_cast<int>(j), static_cast<int>(k)));
    if (params.sdf_override) {
      for (std::size_t q = 0; q < pts.size(); ++q) g.values[k * n * n + q] = params.sdf_override(pts[q]);
      return;
    }
    SdfBatch batch;
    batch.evaluate(params, pts, psi);
    std::copy(batch.values().begin(), batch.values().end(), g.values.begin() + static_cast<std::ptrdiff_t>(k * n * n));
  });
  return g;
}

TriangleMesh marching_cubes(const ScalarGrid& grid) {
  const int R = grid.resolution;
  const auto n = static_cast<std::uint64_t>(R + 1);
  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

  auto vertex_on_edge = [&](int i, int j, int k, int e) -> std::uint32_t {
    const int* c0 = kCorner[kEdge[e][0]];
    const int* c1 = kCorner[kEdge[e][1]];
    std::array<int, 3> a{i + c0[0], j + c0[1], k + c0[2]};
    std::array<int, 3> b{i + c1[0], j + c1[1], k + c1[2]};
    if (a > b) std::swap(a, b);
    const int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
    const std::uint64_t key =
        ((static_cast<std::uint64_t>(a[2]) * n + static_cast<std::uint64_t>(a[1])) * n + static_cast<std::uint64_t>(a[0])) * 3 +
        static_cast<std::uint64_t>(axis);
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = grid.at(a[0], a[1], a[2]);
    const double vb = grid.at(b[0], b[1], b[2]);
    const double t = va == vb ? 0.5 : va / (va - vb);
    const Vec3 pa = grid.point(a[0], a[1], a[2]);
    const Vec3 pb = grid.point(b[0], b[1], b[2]);
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int k = 0; k < R; ++k) {
    for (int j = 0; j < R; ++j) {
      for (int i = 0; i < R; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (grid.at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < 0.0) cube |= 1 << c;
        if (detail::kMcEdgeTable[static_cast<std::size_t>(cube)] == 0) continue;
        const auto& tri = detail::kMcTriTable[static_cast<std::size_t>(cube)];
        for (std::size_t t = 0; t + 2 < tri.size() && tri[t] >= 0; t += 3) {
          // The table winds counter-clockwise when seen from inside; swap to face outward.
          const std::uint32_t a = vertex_on_edge(i, j, k, tri[t]);
          const std::uint32_t b = vertex_on_edge(i, j, k, tri[t + 2]);
          const std::uint32_t c = vertex_on_edge(i, j, k, tri[t + 1]);
          if (a == b || b == c || a == c) continue;
          if (triangle_area(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]) <= 1e-12) continue;
          mesh.triangles.push_back({a, b, c});
        }
      }
    }
  }
  if (mesh.triangles.empty()) std::cerr << "warning: marching cubes found no sign change\n";
  return mesh;
}

TriangleMesh marching_cubes(const std::function<double(const Vec3&)>& fn, const Aabb& bounds,
                            int resolution) {
  return marching_cubes(sample_grid(fn, bounds, resolution));
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ostringstream out;
  out.precision(9);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  write_text(path, out.str());
}

std::vector<Vec3> sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw Error("sample_surface: empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    acc += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    cdf[i] = acc;
  }
  Rng rng(seed);
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double u = rng.uniform() * acc;
    const auto idx = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()), cdf.size() - 1);
    const auto& t = mesh.triangles[idx];
    double r1 = rng.uniform(), r2 = rng.uniform();
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const Vec3& a = mesh.vertices[t[0]];
    pts.push_back(a + r1 * (mesh.vertices[t[1]] - a) + r2 * (mesh.vertices[t[2]] - a));
  }
  return pts;
}

// --- nearest neighbors -------------------------------------------------------------

PointIndex::PointIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw Error("PointIndex: empty point set");
  Vec3 lo = points_.front(), hi = points_.front();
  for (const Vec3& p : points_) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  origin_ = lo;
  const Vec3 ext = (hi - lo).cwiseMax(1e-9);
  // Roughly two points per cell on a surface-like set.
  const double target = std::max(1.0, static_cast<double>(points_.size()) / 2.0);
  cell_ = std::cbrt(ext.prod() / target);
  const double area_cell = std::sqrt((ext.x() * ext.y() + ext.y() * ext.z() + ext.x() * ext.z()) / target);
  cell_ = std::max(std::min(cell_, area_cell), 1e-9);
  for (int a = 0; a < 3; ++a)
    dims_[static_cast<std::size_t>(a)] = std::clamp(static_cast<int>(ext[a] / cell_) + 1, 1, 1024);
  const std::size_t cells = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  std::vector<std::uint32_t> count(cells + 1, 0);
  std::vector<std::size_t> cell_id(points_.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto c = cell_of(points_[i]);
    cell_id[i] = (static_cast<std::size_t>(c[2]) * dims_[1] + static_cast<std::size_t>(c[1])) * dims_[0] +
                 static_cast<std::size_t>(c[0]);
    ++count[cell_id[i] + 1];
  }
  std::partial_sum(count.begin(), count.end(), count.begin());
  start_ = count;
  order_.resize(points_.size());
  std::vector<std::uint32_t> fill(start_.begin(), start_.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i) order_[fill[cell_id[i]]++] = static_cast<std::uint32_t>(i);
}

std::array<int, 3> PointIndex::cell_of(const Vec3& p) const {
  std::array<int, 3> c{};
  for (int a = 0; a < 3; ++a) {
    const auto k = static_cast<std::size_t>(a);
    c[k] = std::clamp(static_cast<int>(std::floor((p[a] - origin_[a]) / cell_)), 0, dims_[k] - 1);
  }
  return c;
}

double PointIndex::nearest(const Vec3& q) const {
  const auto c = cell_of(q);
  // Distance from q to the grid box; rings beyond it must be searched too.
  double best = std::numeric_limits<double>::infinity();
  const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  Vec3 box_hi;
  for (int a = 0; a < 3; ++a) box_hi[a] = origin_[a] + dims_[static_cast<std::size_t>(a)] * cell_;
  const double outside = (origin_ - q).cwiseMax(q - box_hi).cwiseMax(0.0).norm();
  for (int ring = 0; ring <= max_ring; ++ring) {
    // Points in ring r are at least (r - 1) cells away along some axis, and at
    // least the gap to the grid box overall.
    if (std::isfinite(best)) {
      const double inner = std::max(0, ring - 1) * cell_;
      if (inner * inner + outside * outside > best) break;
    }
    for (int dz = -ring; dz <= ring; ++dz) {
      const int z = c[2] + dz;
      if (z < 0 || z >= dims_[2]) continue;
      for (int dy = -ring; dy <= ring; ++dy) {
        const int y = c[1] + dy;
        if (y < 0 || y >= dims_[1]) continue;
        for (int dx = -ring; dx <= ring; ++dx) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          const int x = c[0] + dx;
          if (x < 0 || x >= dims_[0]) continue;
          const std::size_t cell = (static_cast<std::size_t>(z) * dims_[1] + static_cast<std::size_t>(y)) * dims_[0] +
                                   static_cast<std::size_t>(x);
          for (std::uint32_t k = start_[cell]; k < start_[cell + 1]; ++k)
            best = std::min(best, (points_[order_[k]] - q).squaredNorm());
        }
      }
    }
  }
  return std::sqrt(best);
}

double chamfer_points(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw Error("chamfer: empty point set");
  const PointIndex ia(a), ib(b);
  double ab = 0.0, ba = 0.0;
  for (const Vec3& p : a) ab += ib.nearest(p);
  for (const Vec3& p : b) ba += ia.nearest(p);
  return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

double chamfer(const TriangleMesh& a, const TriangleMesh& b, std::size_t n_samples, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw Error("chamfer: empty mesh");
  if (n_samples == 0) throw Error("chamfer: need at least one sample");
  const auto pa = sample_surface(a, n_samples, seed);
  const auto pb = sample_surface(b, n_samples, seed);
  return chamfer_points(pa, pb);
}

// --- image metrics --------------------------------------------------------------------

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("psnr: image dimensions differ");
  if (a.data.empty()) throw Error("psnr: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.data.size());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error("ssim: image dimensions differ");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  const int W = a.width, H = a.height;
  if (W < 2 * kRadius + 1 || H < 2 * kRadius + 1) throw Error("ssim: image smaller than the 11x11 window");
  std::array<double, 2 * kRadius + 1> w{};
  double wsum = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) {
    w[static_cast<std::size_t>(i + kRadius)] = std::exp(-0.5 * i * i / (kSigma * kSigma));
    wsum += w[static_cast<std::size_t>(i + kRadius)];
  }
  for (double& v : w) v /= wsum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  // Separable weighted means of x, y, x^2, y^2, xy over valid windows.
  const int ow = W - 2 * kRadius, oh = H - 2 * kRadius;
  double total = 0.0;
  for (int ch = 0; ch < a.channels; ++ch) {
    std::array<std::vector<double>, 5> rows;
    for (auto& r : rows) r.assign(static_cast<std::size_t>(ow) * H, 0.0);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> s{};
        for (int k = 0; k <= 2 * kRadius; ++k) {
          const double p = a.at(x + k, y, ch), q = b.at(x + k, y, ch);
          const double wk = w[static_cast<std::size_t>(k)];
          s[0] += wk * p;
          s[1] += wk * q;
          s[2] += wk * p * p;
          s[3] += wk * q * q;
          s[4] += wk * p * q;
        }
        for (std::size_t m = 0; m < 5; ++m) rows[m][static_cast<std::size_t>(y) * ow + x] = s[m];
      }
    }
    double acc = 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> s{};
        for (int k = 0; k <= 2 * kRadius; ++k)
          for (std::size_t m = 0; m < 5; ++m)
            s[m] += w[static_cast<std::size_t>(k)] * rows[m][static_cast<std::size_t>(y + k) * ow + x];
        const double vx = s[2] - s[0] * s[0], vy = s[3] - s[1] * s[1], cxy = s[4] - s[0] * s[1];
        acc += ((2 * s[0] * s[1] + c1) * (2 * cxy + c2)) /
               ((s[0] * s[0] + s[1] * s[1] + c1) * (vx + vy + c2));
      }
    }
    total += acc / (static_cast<double>(ow) * oh);
  }
  return total / a.channels;
}

}  // namespace nbvsdf
