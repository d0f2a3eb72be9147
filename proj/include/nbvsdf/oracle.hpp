#pragma once

// Ground-truth capture: analytic CSG scenes rendered by sphere tracing, or a
// directory of pre-captured images. Either way an image is only revealed when
// its pose is explicitly requested.

#include "nbvsdf/renderer.hpp"

#include <filesystem>
#include <set>
#include <string>

namespace nbvsdf {

struct SceneNode {
  enum class Kind { Sphere, Box, Torus, Union, Intersection, SmoothUnion, Transform };

  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  double radius = 0.5;              // sphere radius, torus tube radius
  double major_radius = 0.5;        // torus ring radius (ring in the xy plane)
  Vec3 half_extents{0.5, 0.5, 0.5};  // box
  double blend = 0.1;               // smooth-union k
  Mat3 rotation = Mat3::Identity();  // transform: child sees R^T (x - t)
  Vec3 translation = Vec3::Zero();
  std::vector<SceneNode> children;

  static SceneNode sphere(const Vec3& center, double radius);
  static SceneNode box(const Vec3& center, const Vec3& half_extents);
  static SceneNode torus(const Vec3& center, double major_radius, double minor_radius);
  static SceneNode make_union(std::vector<SceneNode> children);
  static SceneNode make_intersection(std::vector<SceneNode> children);
  static SceneNode smooth_union(SceneNode a, SceneNode b, double k);
  static SceneNode transform(SceneNode child, const Mat3& rotation, const Vec3& translation);
};

struct Albedo {
  enum class Kind { Constant, Checker };
  Kind kind = Kind::Constant;
  Rgb color_a{0.8, 0.8, 0.8};
  Rgb color_b{0.2, 0.2, 0.2};
  double scale = 0.25;  // checker cell size in world units

  Rgb at(const Vec3& x) const;
};

struct AnalyticScene {
  SceneNode root;
  Albedo albedo;
  Vec3 light_direction = Vec3(0.3, -0.5, 0.8).normalized();  // toward the light
  double ambient = 0.3;
  Rgb background{1.0, 1.0, 1.0};
  /// Albedo is looked up at R^T (x - t), so rigid motions carry the texture.
  Mat3 albedo_rotation = Mat3::Identity();
  Vec3 albedo_translation = Vec3::Zero();

  Rgb albedo_at(const Vec3& x) const {
    return albedo.at(albedo_rotation.transpose() * (x - albedo_translation));
  }
  /// Throws unless the light direction is unit length and ambient is in [0, 1].
  void validate() const;
};

double scene_sdf(const SceneNode& node, const Vec3& x);
inline double scene_sdf(const AnalyticScene& scene, const Vec3& x) { return scene_sdf(scene.root, x); }

/// Normalized central-difference gradient of the scene SDF.
Vec3 scene_normal(const AnalyticScene& scene, const Vec3& x, double h = 1e-5);

/// Built-in scenes: "sphere", "sphere_box", "cavity".
AnalyticScene scene_preset(const std::string& name);
/// Applies a rigid motion to the whole scene (geometry, albedo and light).
AnalyticScene transformed(const AnalyticScene& scene, const Mat3& rotation, const Vec3& translation);

struct CaptureRecord {
  CameraView view;
  Image rgb;     // 3 channels
  Image normal;  // 3 channels, world space, zero off the object; empty if unknown
  Image mask;    // 1 channel, 1 on the object
  Image depth;   // 1 channel, ray distance to the hit; empty if unknown
};

struct TraceHit {
  bool hit = false;
  double t = 0.0;
};

/// Sphere tracing inside the radius-1 bounding sphere: at most 256 steps,
/// hit when |f| < 1e-4.
TraceHit sphere_trace(const AnalyticScene& scene, const Ray& ray);

CaptureRecord capture(const AnalyticScene& scene, const CameraView& view);

/// The only gateway to ground-truth images.
class CaptureOracle {
 public:
  virtual ~CaptureOracle() = default;
  virtual std::size_t pose_count() const = 0;
  virtual CameraView pose(std::size_t id) const = 0;
  /// Reveals and returns the capture at `id`; repeated requests are idempotent.
  virtual CaptureRecord capture(std::size_t id) = 0;
  virtual bool has_normals() const = 0;

  const std::set<std::size_t>& revealed() const { return revealed_; }
  std::vector<CameraView> poses() const;

 protected:
  void mark_revealed(std::size_t id);
  void check_id(std::size_t id) const;

 private:
  std::set<std::size_t> revealed_;
};

class SimulatorOracle : public CaptureOracle {
 public:
  SimulatorOracle(AnalyticScene scene, std::vector<CameraView> poses);

  std::size_t pose_count() const override { return poses_.size(); }
  CameraView pose(std::size_t id) const override;
  CaptureRecord capture(std::size_t id) override;
  bool has_normals() const override { return true; }
  const AnalyticScene& scene() const { return scene_; }

 private:
  AnalyticScene scene_;
  std::vector<CameraView> poses_;
  std::vector<std::optional<CaptureRecord>> cache_;
};

/// Directory layout: poses.json plus per-pose PNG images and optional normal
/// PFM and mask PNG files.
class DatasetOracle : public CaptureOracle {
 public:
  explicit DatasetOracle(std::filesystem::path dir);

  std::size_t pose_count() const override { return entries_.size(); }
  CameraView pose(std::size_t id) const override;
  CaptureRecord capture(std::size_t id) override;
  bool has_normals() const override { return has_normals_; }

 private:
  struct Entry {
    CameraView view;
    std::string image, normal, mask;
  };
  std::filesystem::path dir_;
  std::vector<Entry> entries_;
  bool has_normals_ = true;
};

/// Writes captures in the layout DatasetOracle reads.
void write_dataset(const std::filesystem::path& dir, std::span<const CaptureRecord> records);

}  // namespace nbvsdf
