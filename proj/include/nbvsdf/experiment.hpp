#pragma once

// End-to-end runs: reconstruction from a RunConfig, metric evaluation and the
// artifact files written to a run directory.

#include "nbvsdf/config.hpp"
#include "nbvsdf/evalgeom.hpp"

#include <iosfwd>
#include <optional>

namespace nbvsdf {

struct RunMetrics {
  std::optional<double> chamfer;  // needs an analytic scene
  std::optional<double> psnr;     // needs held-out views
  std::optional<double> ssim;
  std::size_t n_views = 0;
  std::string policy;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

/// Chamfer of the extracted surface against the analytic scene, and PSNR/SSIM
/// of renders at the held-out poses. `mesh` receives the extracted surface.
RunMetrics evaluate_field(const FieldParams& params, const RunConfig& config, TriangleMesh* mesh = nullptr);

std::string trace_to_json(const PlannerState& state, Policy policy);

struct RunOutcome {
  ReconstructionResult result;
  RunMetrics metrics;
  std::string trace_json;
  double seconds = 0.0;
};

/// Runs the configured reconstruction. With `write_artifacts`, the output
/// directory receives config.json, loss.csv, trace.json, per-round
/// checkpoints and previews, mesh.obj, final.ckpt and metrics.json.
/// Progress lines go to `log` when given.
RunOutcome run_experiment(const RunConfig& config, bool write_artifacts, std::ostream* log = nullptr);

/// Small problem for finite-difference gradient checks: L = 4, T = 2^10,
/// three 8x8 simulator captures of the sphere-box scene, 64 rays and 64
/// uniform points with depths already sampled.
struct GradcheckProblem {
  FieldParams params;
  RayBatch batch;
  TrainConfig config;
  double psi = 0.0;
};
GradcheckProblem downsized_gradcheck_problem(std::uint64_t seed);

}  // namespace nbvsdf
