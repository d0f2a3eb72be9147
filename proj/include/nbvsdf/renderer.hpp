#pragma once

// SDF-based differentiable volume rendering of RGB, depth, normal and
// silhouette along pinhole camera rays.

#include "nbvsdf/field.hpp"

#include <optional>

namespace nbvsdf {

/// Pinhole camera. Extrinsics map world to camera: x_cam = R * x_world + t,
/// with +z forward, +x right and +y down in the image.
struct CameraView {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int width = 1, height = 1;

  Vec3 center() const { return -rotation.transpose() * translation; }
  Mat3 intrinsics() const;
  Mat4 world_to_camera() const;
  /// Same pose, intrinsics rescaled to a new raster size.
  CameraView scaled(int new_width, int new_height) const;
  /// Continuous pixel coordinates of a world point; nullopt behind the camera.
  std::optional<Vec2> project(const Vec3& world) const;
  void validate() const;

  static CameraView look_at(const Vec3& eye, const Vec3& target, int width, int height,
                            double fov_y_deg, const Vec3& up = Vec3::UnitZ());
};

struct Ray {
  Vec3 origin;
  Vec3 direction;
};

/// Ray through continuous pixel position (u, v); pixel centers sit at +0.5.
Ray generate_ray(const CameraView& view, double u, double v);

/// Entry/exit distances of a ray through the origin-centered bounding sphere.
std::optional<std::pair<double, double>> ray_sphere_range(const Ray& ray, double radius);

struct RenderConfig {
  int n_coarse = 64;
  int n_importance = 32;
  double bound_radius = 1.0;
  double near_min = 0.05;
  Rgb background{1.0, 1.0, 1.0};
  /// Samples with weight <= threshold skip the normal/color evaluation and
  /// composite as background. Negative keeps every sample.
  double prune_threshold = 1e-4;
  bool jitter = true;
};

/// n depths in [near, far]: bin midpoints, or uniformly jittered within bins.
std::vector<double> stratified_depths(double near, double far, int n, Rng* jitter);

/// Inverse-CDF samples over the intervals [depths[j], depths[j+1]] with
/// probability proportional to weights[j] (one weight per interval).
std::vector<double> importance_depths(std::span<const double> depths,
                                      std::span<const double> weights, int n, Rng* jitter);

/// Logistic Phi_tau(y) = 1 / (1 + exp(-tau * y)).
double logistic_cdf(double y, double tau);

struct AlphaGrad {
  double value = 0.0;
  double d_sdf = 0.0;
  double d_sdf_next = 0.0;
  double d_tau = 0.0;
};

/// Discrete opacity max(0, (Phi(s_i) - Phi(s_next)) / Phi(s_i)).
double alpha(double sdf_i, double sdf_next, double tau);
AlphaGrad alpha_with_grad(double sdf_i, double sdf_next, double tau);

struct RenderOutput {
  Rgb rgb = Rgb::Zero();
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();
  double silhouette = 0.0;
};

/// Front-to-back compositing of per-segment alphas. `colors` and `normals`
/// are per segment; background fills the residual transmittance.
RenderOutput composite(std::span<const double> alphas, std::span<const Rgb> colors,
                       std::span<const double> depths, std::span<const Vec3> normals,
                       const Rgb& background, double far);

/// A ray together with its sample depths (empty when it misses the bounds).
struct RayQuery {
  Ray ray;
  bool hit = false;
  double near = 0.0;
  double far = 0.0;
  std::vector<double> depths;
};

RayQuery make_query(const Ray& ray, const RenderConfig& config);

/// Coarse + importance depths for a query, guided by the current field.
void sample_along_ray(RayQuery& query, const FieldParams& params, double psi,
                      const RenderConfig& config, Rng* jitter);

/// Batched renderer. forward() evaluates a set of rays with fixed depths; when
/// `keep` is set, backward() pushes dL/d(rgb, normal) into parameter grads.
class VolumeRenderer {
 public:
  VolumeRenderer(const FieldParams& params, double psi, RenderConfig config);

  /// Fills depths for every query (forward-only coarse pass + importance pass).
  void sample(std::span<RayQuery> queries, std::span<Rng> jitter) const;

  const std::vector<RenderOutput>& forward(std::span<const RayQuery> queries, bool keep);
  /// `d_kept` optionally carries extra gradients for the values returned by
  /// kept_values() (7 per kept sample).
  void backward(std::span<const Vec3> d_rgb, std::span<const Vec3> d_normal, FieldGrad& grad,
                std::span<const double> d_kept = {}) const;

  /// World positions of samples whose color/normal were evaluated.
  std::vector<Vec3> kept_points() const;
  /// Per kept sample: f(x), then f at x +- eps along x, y, z.
  std::vector<double> kept_values() const;
  double gradient_eps() const { return eps_; }

 private:
  struct Segment {
    std::size_t ray;
    std::size_t point;  // index into the sample batch (x_i)
    double t;
    double alpha;
    AlphaGrad dalpha;
    double transmittance;
    double weight;
    long kept = -1;  // index into kept arrays
  };

  const FieldParams& params_;
  double psi_;
  RenderConfig config_;
  double eps_;

  std::vector<Vec3> dirs_;
  std::vector<double> far_;
  std::vector<std::size_t> seg_begin_, seg_end_;
  std::vector<std::size_t> point_begin_;
  std::vector<Segment> segments_;
  std::vector<std::size_t> kept_segment_;
  std::vector<Vec3> kept_grad_;  // FD gradient per kept sample
  std::vector<Vec3> kept_normal_;
  std::vector<Vec3> raw_normal_;  // per ray, before normalization
  SdfBatch samples_;
  SdfBatch stencils_;
  ColorBatch colors_;
  std::vector<RenderOutput> out_;
};

RenderOutput render_pixel(const CameraView& view, double u, double v, const FieldParams& params,
                          double psi, const RenderConfig& config, std::uint64_t seed);

struct RenderImage {
  int width = 0, height = 0;
  std::vector<RenderOutput> pixels;

  const RenderOutput& at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  Image rgb() const;
  Image depth() const;
  Image silhouette() const;
  Image normal() const;
};

/// Full-resolution render at pixel centers; rows render in parallel and each
/// pixel draws jitter from its own counter-based stream.
RenderImage render_view(const CameraView& view, const FieldParams& params, double psi,
                        const RenderConfig& config, std::uint64_t seed);

}  // namespace nbvsdf
