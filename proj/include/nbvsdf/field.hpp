#pragma once

// Multi-resolution hash-encoded SDF and color fields.
//
// The learnable state lives in FieldParams and is stored in 32-bit floats so
// that checkpoints round-trip bit-exactly. All arithmetic on top of it runs in
// double precision.

#include "nbvsdf/common.hpp"

#include <array>
#include <span>

namespace nbvsdf {

struct HashGridConfig {
  int levels = 12;
  int channels = 2;
  std::uint32_t table_size = 1u << 19;
  int base_resolution = 16;
  double growth_factor = 1.38;
  Aabb bounds;

  /// Cells per axis at 0-based level `level`.
  int resolution(int level) const;
  /// Smallest cell edge (world units) among levels 0..finest_level.
  double cell_size(int finest_level) const;
  int feature_width() const { return levels * channels; }
  void validate() const;
};

/// Bandwidth schedule psi(i) = min(L, i * L / threshold).
struct ProgressiveSchedule {
  long threshold = 10000;
  int levels = 12;
  bool enabled = true;

  double psi(long iteration) const;
};

/// Binary per-level mask entry: level l (0-based) is active iff l <= psi.
inline bool level_active(int level, double psi) { return static_cast<double>(level) <= psi; }
/// Index of the finest active level for bandwidth psi.
int finest_active_level(double psi, int levels);

std::uint32_t hash_index(const std::array<std::int64_t, 3>& corner, int level,
                         const HashGridConfig& config);

struct DenseLayer {
  Eigen::MatrixXf weight;  // out x in
  Eigen::VectorXf bias;
};

struct FieldInit {
  double table_init = 1e-4;
  double sphere_radius = 0.5;
  double tau = 15.0;
  int sdf_hidden = 64;
  int color_hidden = 64;
  bool zero_color_output = false;
};

struct FieldParams {
  HashGridConfig grid;
  /// Level-major: table[(level * T + entry) * F + channel].
  std::vector<float> table;
  /// (3 + L*F) -> 64 -> 1, softplus hidden activation.
  std::vector<DenseLayer> sdf_decoder;
  /// (L*F + 3 + 3) -> 64 -> 64 -> 3, ReLU hidden, logistic output.
  std::vector<DenseLayer> color_decoder;
  float tau_raw = 0.0f;

  /// Test harness hook: when set, sdf() and sdf_gradient() evaluate this
  /// function instead of the learned decoder.
  std::function<double(const Vec3&)> sdf_override;

  static FieldParams initialize(const HashGridConfig& grid, std::uint64_t seed,
                                const FieldInit& init = {});

  double tau() const { return std::exp(static_cast<double>(tau_raw)); }
  std::size_t parameter_count() const;
  std::size_t table_entries() const {
    return static_cast<std::size_t>(grid.levels) * grid.table_size;
  }
};

/// Softplus sharpness of the SDF decoder hidden layer.
inline constexpr double kSoftplusBeta = 100.0;

/// Gradient slots mirroring FieldParams. Hash-table gradients are sparse: only
/// entries recorded in `touched` are nonzero.
struct FieldGrad {
  std::vector<double> table;
  std::vector<std::uint32_t> touched;
  std::vector<std::uint8_t> touched_flag;
  std::vector<Eigen::MatrixXd> sdf_weight, color_weight;
  std::vector<Eigen::VectorXd> sdf_bias, color_bias;
  double tau_raw = 0.0;

  FieldGrad() = default;
  explicit FieldGrad(const FieldParams& params);

  void clear();
  void add_table(std::uint32_t entry, int channel, int channels, double value) {
    if (!touched_flag[entry]) {
      touched_flag[entry] = 1;
      touched.push_back(entry);
    }
    table[static_cast<std::size_t>(entry) * channels + channel] += value;
  }
  bool all_finite() const;
};

/// Level-major feature vector of width L*F; masked levels are exactly zero.
Eigen::VectorXd encode(const Vec3& x, const FieldParams& params, double psi);

double sdf(const Vec3& x, const FieldParams& params, double psi);

/// Central finite-difference spatial gradient with step `eps`.
template <class SdfFn>
Vec3 central_gradient(SdfFn&& f, const Vec3& x, double eps) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 a = x, b = x;
    a[k] += eps;
    b[k] -= eps;
    g[k] = (f(a) - f(b)) / (2.0 * eps);
  }
  return g;
}

/// Step equal to the finest active cell size.
double gradient_step(const FieldParams& params, double psi);
Vec3 sdf_gradient(const Vec3& x, const FieldParams& params, double psi);
Vec3 sdf_gradient(const Vec3& x, const FieldParams& params, double psi, double eps);

Rgb color(const Vec3& x, const Vec3& view_direction, const Vec3& normal,
          const FieldParams& params, double psi);

/// Batched SDF evaluation with caches for reverse-mode differentiation.
class SdfBatch {
 public:
  void evaluate(const FieldParams& params, std::span<const Vec3> points, double psi);

  std::size_t size() const { return values_.size(); }
  double value(std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  /// Masked hash features of point i (column of width L*F).
  auto features(std::size_t i) const { return inputs_.col(static_cast<Eigen::Index>(i)).tail(feature_width_); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// Accumulates parameter gradients given dL/dvalue per point and an optional
  /// extra dL/dfeatures block (L*F x size) from downstream consumers.
  void backward(const FieldParams& params, std::span<const double> dvalue,
                const Eigen::MatrixXd* dfeatures, FieldGrad& grad) const;

  /// Replaces decoder outputs with an analytic function of the (clamped)
  /// positions. Used by the test harness; backward() is then meaningless.
  void replace_values(const std::function<double(const Vec3&)>& fn) {
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = fn(points_[i]);
  }

  /// Analytic derivative of the SDF with respect to the query position.
  /// Components that were clamped to the bounds have zero derivative.
  Vec3 position_gradient(const FieldParams& params, std::size_t i) const;
  std::vector<Vec3> position_gradients(const FieldParams& params) const;

 private:
  Vec3 position_gradient(const FieldParams& params, std::size_t i, const Eigen::MatrixXd& w0,
                         const Eigen::VectorXd& w1) const;

  double psi_ = 0.0;
  Eigen::Index feature_width_ = 0;
  std::vector<Vec3> points_;
  std::vector<std::array<bool, 3>> clamped_;
  Eigen::MatrixXd inputs_;  // (3 + LF) x B
  Eigen::MatrixXd hidden_;  // pre-activation, H x B
  Eigen::ArrayXXd act_;     // softplus(hidden_)
  Eigen::ArrayXXd slope_;   // softplus'(hidden_)
  std::vector<double> values_;
};

/// Batched color decoder with reverse-mode support. Inputs are
/// [features, view direction, normal] per column.
class ColorBatch {
 public:
  void evaluate(const FieldParams& params, Eigen::MatrixXd inputs);
  std::size_t size() const { return static_cast<std::size_t>(out_.cols()); }
  Rgb value(std::size_t i) const { return out_.col(static_cast<Eigen::Index>(i)); }
  /// Returns dL/dinputs given dL/drgb (3 x B) and accumulates parameter grads.
  Eigen::MatrixXd backward(const FieldParams& params, const Eigen::MatrixXd& drgb,
                           FieldGrad& grad) const;

 private:
  std::vector<Eigen::MatrixXd> activations_;  // post-activation per layer input
  std::vector<Eigen::MatrixXd> pre_;          // pre-activation per layer
  Eigen::MatrixXd out_;
};

}  // namespace nbvsdf
