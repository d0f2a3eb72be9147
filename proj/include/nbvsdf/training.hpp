#pragma once

// Loss terms, their gradients, Adam, and the single training step.

#include "nbvsdf/renderer.hpp"

#include <concepts>
#include <optional>
#include <string>

namespace nbvsdf {

struct LossWeights {
  double normal = 0.05;
  double eikonal = 0.1;
  double dir_hessian = 0.05;
};

struct LossBreakdown {
  double rgb = 0.0;
  double normal = 0.0;
  double eikonal = 0.0;
  double dir_hessian = 0.0;
  double total = 0.0;
};

/// Mean over rays of the per-ray L1 norm of the RGB difference.
double loss_rgb(std::span<const Rgb> rendered, std::span<const Rgb> target);

/// Mean of 1 - dot(n, n_gt) over rays with mask > 0.5; 0 when no ray is masked.
double loss_normal(std::span<const Vec3> rendered, std::span<const Vec3> target,
                   std::span<const double> mask);

/// Weighted sum of the components; throws naming the first non-finite one.
double loss_total(const LossBreakdown& components, const LossWeights& weights);

/// Mean of (|grad f| - 1)^2 with central-difference gradients of step eps.
template <std::invocable<const Vec3&> SdfFn>
double loss_eikonal(std::span<const Vec3> points, SdfFn&& f, double eps) {
  if (points.empty()) throw Error("loss_eikonal: empty point set");
  double acc = 0.0;
  for (const Vec3& x : points) {
    const double g = central_gradient(f, x, eps).norm() - 1.0;
    acc += g * g;
  }
  return acc / static_cast<double>(points.size());
}

/// Mean of exp(-delta |f(x)|) * | |grad f(x)| - |grad f(x + eps * n)| | / eps
/// where n is the normalized gradient at x. Points with |grad f| < 1e-8 are
/// skipped; returns 0 if every point is skipped.
template <std::invocable<const Vec3&> SdfFn>
double loss_dir_hessian(std::span<const Vec3> points, SdfFn&& f, double delta, double eps) {
  if (points.empty()) throw Error("loss_dir_hessian: empty point set");
  double acc = 0.0;
  std::size_t used = 0;
  for (const Vec3& x : points) {
    const Vec3 g = central_gradient(f, x, eps);
    const double gn = g.norm();
    if (gn < 1e-8) continue;
    const Vec3 y = x + eps * g / gn;
    const double gy = central_gradient(f, y, eps).norm();
    acc += std::exp(-delta * std::abs(f(x))) * std::abs(gn - gy) / eps;
    ++used;
  }
  return used == 0 ? 0.0 : acc / static_cast<double>(used);
}

/// Field-backed forms; eps is the finest active cell size.
double loss_eikonal(std::span<const Vec3> points, const FieldParams& params, double psi);
double loss_dir_hessian(std::span<const Vec3> points, const FieldParams& params, double psi,
                        double delta);

/// Eikonal and directional-Hessian terms over a point set with reverse-mode
/// support. Spatial gradients use central differences with step eps; the
/// shifted point x + eps * n is differentiated through n.
class RegularizerBatch {
 public:
  struct Values {
    double eikonal = 0.0;
    double dir_hessian = 0.0;
  };

  /// `known` may supply the seven stencil values (x, x+e0, x-e0, ..., x-e2)
  /// of the leading known.size() / 7 points, which are then not re-evaluated.
  Values evaluate(const FieldParams& params, double psi, std::span<const Vec3> points,
                  double delta, std::span<const double> known = {});
  /// Gradients for the `known` values are written to `d_known` when given.
  void backward(const FieldParams& params, double w_eikonal, double w_dir, FieldGrad& grad,
                std::vector<double>* d_known = nullptr) const;

 private:
  double eps_ = 0.0;
  double delta_ = 0.0;
  std::size_t n_ = 0;
  std::size_t known_ = 0;
  std::size_t used_ = 0;
  std::vector<double> values_;  // 7 per point, same layout as `known`
  SdfBatch base_;     // stencils of the points after the known ones
  SdfBatch shifted_;  // per point: y +- e_k
  std::vector<Vec3> grad_x_, grad_y_;
  std::vector<std::uint8_t> valid_;
};

struct AdamConfig {
  double lr_table = 1e-2;
  double lr_decoder = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
};

/// Learning-rate multiplier: 1 until `hold`, then cosine decay to 0 at `total`.
double cosine_factor(long iteration, long hold, long total);

/// Adam with lazy updates of the hash table: only entries that received a
/// gradient in the current step have their moments and values updated.
class Adam {
 public:
  Adam() = default;
  Adam(const FieldParams& params, AdamConfig config);

  void step(FieldParams& params, const FieldGrad& grad, double lr_factor);
  long steps() const { return t_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<float> table_m_, table_v_;
  std::vector<Eigen::MatrixXd> wm_, wv_;
  std::vector<Eigen::VectorXd> bm_, bv_;
  double tau_m_ = 0.0, tau_v_ = 0.0;
};

/// One captured image available for supervision.
struct TrainView {
  CameraView view;
  Image rgb;     // 3 channels
  Image normal;  // 3 channels, world space; empty if unavailable
  Image mask;    // 1 channel
  std::size_t id = 0;
};

struct TrainConfig {
  int batch_rays = 1024;
  int uniform_points = 1024;
  LossWeights weights;
  double delta = 50.0;
  AdamConfig adam;
  ProgressiveSchedule schedule;
  RenderConfig render;
  long total_iters = 15000;
};

/// Supervision for a fixed set of rays plus the extra regularizer points.
struct RayBatch {
  std::vector<RayQuery> queries;
  std::vector<Rgb> rgb;
  std::vector<Vec3> normal;
  std::vector<double> mask;
  std::vector<Vec3> uniform_points;
};

/// Draws rays uniformly over all pixels of all views, and uniform points in
/// the grid bounds. Depths are not yet sampled.
RayBatch draw_batch(std::span<const TrainView> views, int rays, int uniform_points,
                    const Aabb& bounds, const RenderConfig& render, Rng& rng);

/// Loss of the full objective on a batch whose depths are already sampled.
/// When `grad` is given, accumulates dL/dparams into it.
LossBreakdown evaluate_batch(const FieldParams& params, double psi, const RayBatch& batch,
                             const TrainConfig& config, bool use_normals, FieldGrad* grad);

struct TrainState {
  FieldParams params;
  Adam optimizer;
  FieldGrad grad;
  long iteration = 0;
  std::uint64_t seed = 0;

  TrainState() = default;
  TrainState(FieldParams p, const TrainConfig& config, std::uint64_t seed);
};

/// Samples a batch, backpropagates the total loss and applies one Adam step.
LossBreakdown train_step(TrainState& state, std::span<const TrainView> views,
                         const TrainConfig& config, bool use_normals);

struct GradcheckOptions {
  int probes = 200;
  double tolerance = 1e-3;
  double pass_fraction = 0.99;
  std::uint64_t seed = 0;
  /// Fault-injection hook applied to the analytic gradient before comparison.
  std::function<void(FieldGrad&)> corrupt;
};

struct GradcheckGroup {
  std::string name;
  int probes = 0;
  int passed = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  int probes = 0;
  int passed = 0;
  double loss = 0.0;
  bool pass = false;
};

/// Compares analytic gradients of the total loss on a frozen batch with
/// central differences of the float-stored parameters.
GradcheckReport gradcheck(const FieldParams& params, double psi, const RayBatch& batch,
                          const TrainConfig& config, const GradcheckOptions& options);

}  // namespace nbvsdf
