#pragma once

// Next-view selection by cross-view warping consistency, clustered initial
// views, and the up-front baseline policies.

#include "nbvsdf/training.hpp"

#include <string>

namespace nbvsdf {

/// Source image forward-warped into a destination raster.
struct WarpResult {
  Image image;  // 3 channels; background-zero where mask is 0
  Image mask;   // 1 channel, 0 or 1
  /// Per source pixel (row-major): continuous destination pixel coordinates
  /// of its back-projected point, NaN when the pixel is not splatted.
  std::vector<Vec2> projected;
};

/// Back-projects every source pixel with silhouette > 0.5 along its ray to the
/// rendered depth, projects into `dst` and splats to the nearest destination
/// pixel; the smallest destination-camera z wins.
WarpResult warp_to_view(const RenderImage& rendered, const CameraView& src, const CameraView& dst);

struct CandidateScore {
  std::size_t candidate_id = 0;
  double score = 0.0;
  bool degenerate = false;  // empty visibility mask
};

/// Sum over mask pixels and channels of |warped - target|.
CandidateScore warp_difference(const WarpResult& warp, const Image& target);

struct PlannerConfig {
  int resolution = 96;  // square raster for candidate renders
  RenderConfig render{.jitter = false};
};

struct PlanningRound {
  long iteration = 0;
  std::vector<CandidateScore> scores;  // ascending candidate id
  std::size_t chosen_id = 0;
};

struct PlannerState {
  std::vector<CameraView> poses;  // every candidate pose, indexed by id
  std::vector<TrainView> training;
  std::vector<std::size_t> remaining;  // ascending ids not yet captured
  std::vector<PlanningRound> trace;

  explicit PlannerState(std::vector<CameraView> candidate_poses = {});
  /// Moves `id` from the remaining set into the training set.
  void add(TrainView view);
  bool captured(std::size_t id) const;
};

/// Index of the training view whose camera center is nearest to `pose`.
std::size_t closest_training_view(const CameraView& pose, std::span<const TrainView> training);

/// Renders the candidate at planner resolution, warps it into its closest
/// training view and returns the masked photometric difference.
CandidateScore warping_score(const CameraView& candidate, std::span<const TrainView> training,
                             const FieldParams& params, double psi, const PlannerConfig& config);

/// Scores all remaining candidates, appends the round to the trace and
/// returns the argmax (lowest id on ties).
std::size_t select_next(PlannerState& state, const FieldParams& params, double psi,
                        const PlannerConfig& config, long iteration);

struct KMeansResult {
  std::vector<Vec3> centroids;
  std::vector<std::size_t> assignment;
};

/// k-means++ seeding followed by 50 Lloyd iterations.
KMeansResult kmeans(std::span<const Vec3> points, std::size_t k, std::uint64_t seed, int iterations = 50);

/// Candidate nearest each k-means centroid of the camera centers; a candidate
/// already taken falls through to the next nearest.
std::vector<std::size_t> select_initial(std::span<const CameraView> candidates, std::size_t k,
                                        std::uint64_t seed);

enum class Policy { Planning, Random, Cluster, Farthest };

Policy parse_policy(const std::string& name);
std::string policy_name(Policy policy);

/// Picks `budget` candidates up front, in capture order.
std::vector<std::size_t> baseline_select(Policy policy, std::span<const CameraView> candidates,
                                         std::size_t budget, std::uint64_t seed);

}  // namespace nbvsdf
