#pragma once

// Run configuration: JSON parsing with strict key checking, candidate pose
// samplers and scene descriptions.

#include "nbvsdf/reconstruct.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace nbvsdf {

/// n cameras on a horizontal circle at the given elevation, looking at the origin.
std::vector<CameraView> ring_poses(int count, double elevation_deg, double radius, int width, int height,
                                   double fov_deg);
/// n cameras on a Fibonacci lattice over the upper hemisphere, looking at the origin.
std::vector<CameraView> hemisphere_poses(int count, double radius, int width, int height, double fov_deg);

struct PoseSampler {
  std::string type = "ring";  // "ring" | "hemisphere"
  int count = 20;
  double elevation_deg = 20.0;  // ring only
  double radius = 2.5;
};

struct PoseSetSpec {
  std::vector<PoseSampler> samplers;
  int width = 96;
  int height = 96;
  double fov_deg = 40.0;

  std::vector<CameraView> generate() const;
};

struct EvaluationSpec {
  int mesh_resolution = 128;
  int reference_resolution = 192;
  int chamfer_samples = 20000;
  /// Held-out views for PSNR/SSIM; no samplers disables image metrics.
  PoseSetSpec heldout{{{"ring", 5, 35.0, 2.5}}};
};

struct RunConfig {
  /// Serialized scene object: {"preset": name}, {"dataset": dir} or a CSG
  /// description (see parse_scene).
  std::string scene_spec = R"({"preset":"sphere_box"})";
  PoseSetSpec candidates{{{"ring", 20, 15.0, 2.5}, {"hemisphere", 20, 0.0, 2.5}}};
  EvaluationSpec evaluation;
  ReconstructionConfig reconstruction;
  std::string output_dir = "run";

  /// Parses JSON text; unknown keys and type mismatches raise Error.
  static RunConfig parse(const std::string& json_text);
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical JSON with every default materialized.
  std::string to_json() const;
  void validate() const;

  /// Dataset directory named by the scene, empty for analytic scenes.
  std::filesystem::path dataset_dir() const;
  AnalyticScene scene() const;
  /// Simulator over the candidate poses, or the dataset reader.
  std::unique_ptr<CaptureOracle> make_oracle() const;
};

/// Analytic scene from JSON. Either {"preset": name} or {"root": node} with
/// optional "albedo", "light_direction", "ambient" and "background"; both
/// forms accept a rigid "rotation_deg" (xyz Euler) and "translation".
/// Nodes: {"type": "sphere"|"box"|"torus"|"union"|"intersection"|
/// "smooth_union"|"transform", ...}.
AnalyticScene parse_scene(const std::string& json_text);

}  // namespace nbvsdf
