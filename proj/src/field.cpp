#include "nbvsdf/field.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace nbvsdf {

namespace {

constexpr std::uint32_t kPrimes[3] = {1u, 2654435761u, 805459861u};

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Per-level lattice lookup for one point: 8 corner entries and weights.
struct CellLookup {
  std::array<std::uint32_t, 8> entry;
  std::array<double, 8> weight;
  Vec3 frac;
};

struct LevelLattice {
  int res;
  Vec3 scale;
  Vec3 origin;
  std::uint32_t offset;
  std::uint32_t mask;

  LevelLattice(const HashGridConfig& g, int level)
      : res(g.resolution(level)),
        scale(Vec3::Constant(res).cwiseQuotient(g.bounds.extent())),
        origin(g.bounds.min),
        offset(static_cast<std::uint32_t>(level) * g.table_size),
        mask(g.table_size - 1u) {}

  CellLookup lookup(const Vec3& p) const {
    CellLookup c;
    std::array<std::uint32_t, 3> base;
    for (int a = 0; a < 3; ++a) {
      const double s = (p[a] - origin[a]) * scale[a];
      int b = static_cast<int>(s);  // s >= 0 after clamping to the bounds
      b = b < 0 ? 0 : (b > res - 1 ? res - 1 : b);
      base[static_cast<std::size_t>(a)] = static_cast<std::uint32_t>(b);
      c.frac[a] = s - b;
    }
    const std::uint32_t hx[2] = {base[0] * kPrimes[0], (base[0] + 1u) * kPrimes[0]};
    const std::uint32_t hy[2] = {base[1] * kPrimes[1], (base[1] + 1u) * kPrimes[1]};
    const std::uint32_t hz[2] = {base[2] * kPrimes[2], (base[2] + 1u) * kPrimes[2]};
    const double wx[2] = {1.0 - c.frac.x(), c.frac.x()};
    const double wy[2] = {1.0 - c.frac.y(), c.frac.y()};
    const double wz[2] = {1.0 - c.frac.z(), c.frac.z()};
    for (int k = 0; k < 8; ++k) {
      const int dx = k & 1, dy = (k >> 1) & 1, dz = (k >> 2) & 1;
      c.entry[static_cast<std::size_t>(k)] = offset + ((hx[dx] ^ hy[dy] ^ hz[dz]) & mask);
      c.weight[static_cast<std::size_t>(k)] = wx[dx] * wy[dy] * wz[dz];
    }
    return c;
  }
};

}  // namespace

int HashGridConfig::resolution(int level) const {
  return static_cast<int>(std::floor(base_resolution * std::pow(growth_factor, level)));
}

double HashGridConfig::cell_size(int finest_level) const {
  const Vec3 ext = bounds.extent();
  return ext.minCoeff() / resolution(finest_level);
}

void HashGridConfig::validate() const {
  if (levels < 1) throw Error("hash grid: levels must be >= 1");
  if (channels < 1) throw Error("hash grid: channels must be >= 1");
  if (table_size == 0 || !std::has_single_bit(table_size))
    throw Error("hash grid: table_size must be a power of two");
  if (base_resolution < 1) throw Error("hash grid: base_resolution must be >= 1");
  for (int l = 1; l < levels; ++l)
    if (resolution(l) <= resolution(l - 1))
      throw Error("hash grid: level resolutions must be strictly increasing");
  if (!((bounds.max.array() > bounds.min.array()).all()))
    throw Error("hash grid: empty bounds");
}

double ProgressiveSchedule::psi(long iteration) const {
  if (!enabled || threshold <= 0) return static_cast<double>(levels);
  const double v = static_cast<double>(std::max(0L, iteration)) * levels / static_cast<double>(threshold);
  return std::min(static_cast<double>(levels), v);
}

int finest_active_level(double psi, int levels) {
  const int l = static_cast<int>(std::floor(std::max(0.0, psi)));
  return std::min(levels - 1, l);
}

std::uint32_t hash_index(const std::array<std::int64_t, 3>& corner, int /*level*/,
                         const HashGridConfig& config) {
  std::uint32_t h = 0;
  for (int a = 0; a < 3; ++a)
    h ^= static_cast<std::uint32_t>(corner[static_cast<std::size_t>(a)]) * kPrimes[a];
  return h & (config.table_size - 1u);
}

FieldParams FieldParams::initialize(const HashGridConfig& grid, std::uint64_t seed,
                                    const FieldInit& init) {
  grid.validate();
  FieldParams p;
  p.grid = grid;
  Rng rng(seed);
  p.table.resize(p.table_entries() * static_cast<std::size_t>(grid.channels));
  for (float& v : p.table) v = static_cast<float>(rng.uniform(-init.table_init, init.table_init));

  const int lf = grid.feature_width();
  const int h = init.sdf_hidden;
  // Geometric initialization: the decoder starts close to |x| - r.
  DenseLayer first{Eigen::MatrixXf::Zero(h, 3 + lf), Eigen::VectorXf::Zero(h)};
  const double sd = std::sqrt(2.0) / std::sqrt(static_cast<double>(h));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < 3; ++c) first.weight(r, c) = static_cast<float>(rng.normal(0.0, sd));
  DenseLayer last{Eigen::MatrixXf::Zero(1, h), Eigen::VectorXf::Zero(1)};
  const double mean = std::sqrt(std::numbers::pi) / std::sqrt(static_cast<double>(h));
  for (int c = 0; c < h; ++c) last.weight(0, c) = static_cast<float>(rng.normal(mean, 1e-4));
  last.bias(0) = static_cast<float>(-init.sphere_radius);
  p.sdf_decoder = {std::move(first), std::move(last)};

  const int ch = init.color_hidden;
  const std::array<int, 4> widths{lf + 6, ch, ch, 3};
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXf(widths[l + 1], widths[l]), Eigen::VectorXf(widths[l + 1])};
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    const bool zero = init.zero_color_output && l + 2 == widths.size();
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      layer.weight.data()[i] = zero ? 0.0f : static_cast<float>(rng.uniform(-bound, bound));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
      layer.bias[i] = zero ? 0.0f : static_cast<float>(rng.uniform(-bound, bound));
    p.color_decoder.push_back(std::move(layer));
  }
  p.tau_raw = static_cast<float>(std::log(init.tau));
  return p;
}

std::size_t FieldParams::parameter_count() const {
  std::size_t n = table.size() + 1;
  for (const auto& l : sdf_decoder) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  for (const auto& l : color_decoder) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

FieldGrad::FieldGrad(const FieldParams& params)
    : table(params.table.size(), 0.0), touched_flag(params.table_entries(), 0) {
  for (const auto& l : params.sdf_decoder) {
    sdf_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    sdf_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  for (const auto& l : params.color_decoder) {
    color_weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    color_bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
}

void FieldGrad::clear() {
  const std::size_t f = touched_flag.empty() ? 1 : table.size() / touched_flag.size();
  for (std::uint32_t e : touched) {
    touched_flag[e] = 0;
    for (std::size_t c = 0; c < f; ++c) table[e * f + c] = 0.0;
  }
  touched.clear();
  for (auto& m : sdf_weight) m.setZero();
  for (auto& m : color_weight) m.setZero();
  for (auto& v : sdf_bias) v.setZero();
  for (auto& v : color_bias) v.setZero();
  tau_raw = 0.0;
}

bool FieldGrad::all_finite() const {
  const std::size_t f = touched_flag.empty() ? 1 : table.size() / touched_flag.size();
  for (std::uint32_t e : touched)
    for (std::size_t c = 0; c < f; ++c)
      if (!std::isfinite(table[e * f + c])) return false;
  for (const auto& m : sdf_weight) if (!m.allFinite()) return false;
  for (const auto& m : color_weight) if (!m.allFinite()) return false;
  for (const auto& v : sdf_bias) if (!v.allFinite()) return false;
  for (const auto& v : color_bias) if (!v.allFinite()) return false;
  return std::isfinite(tau_raw);
}

// --- SdfBatch ---------------------------------------------------------------

void SdfBatch::evaluate(const FieldParams& params, std::span<const Vec3> points, double psi) {
  const HashGridConfig& g = params.grid;
  const auto B = static_cast<Eigen::Index>(points.size());
  const int F = g.channels;
  feature_width_ = g.feature_width();
  psi_ = psi;
  points_.resize(points.size());
  clamped_.resize(points.size());
  int active = 0;
  while (active < g.levels && level_active(active, psi)) ++active;
  const Eigen::Index used_rows = 3 + static_cast<Eigen::Index>(active) * F;
  inputs_.resize(3 + feature_width_, B);
  if (used_rows < inputs_.rows()) inputs_.bottomRows(inputs_.rows() - used_rows).setZero();

  const Vec3 lo = g.bounds.min, hi = g.bounds.max;
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Vec3& raw = points[k];
    Vec3& p = points_[k];
    for (int a = 0; a < 3; ++a) {
      const double v = raw[a];
      const bool below = v < lo[a], above = v > hi[a];
      p[a] = below ? lo[a] : (above ? hi[a] : v);
      clamped_[k][static_cast<std::size_t>(a)] = below || above;
    }
    inputs_.block<3, 1>(0, i) = p;
  }
  for (int l = 0; l < active; ++l) {
    if (!level_active(l, psi)) break;
    const LevelLattice lat(g, l);
    for (Eigen::Index i = 0; i < B; ++i) {
      const CellLookup c = lat.lookup(points_[static_cast<std::size_t>(i)]);
      double* out = &inputs_(3 + l * F, i);
      if (F == 2) {
        double a0 = 0.0, a1 = 0.0;
        for (int k = 0; k < 8; ++k) {
          const float* t = &params.table[static_cast<std::size_t>(c.entry[static_cast<std::size_t>(k)]) * 2];
          a0 += c.weight[static_cast<std::size_t>(k)] * t[0];
          a1 += c.weight[static_cast<std::size_t>(k)] * t[1];
        }
        out[0] = a0;
        out[1] = a1;
      } else {
        for (int ch = 0; ch < F; ++ch) {
          double acc = 0.0;
          for (int k = 0; k < 8; ++k)
            acc += c.weight[static_cast<std::size_t>(k)] *
                   params.table[static_cast<std::size_t>(c.entry[static_cast<std::size_t>(k)]) * F + ch];
          out[ch] = acc;
        }
      }
    }
  }

  const Eigen::MatrixXd w0 = params.sdf_decoder[0].weight.cast<double>();
  const Eigen::VectorXd b0 = params.sdf_decoder[0].bias.cast<double>();
  const Eigen::RowVectorXd w1 = params.sdf_decoder[1].weight.cast<double>().row(0);
  const double b1 = params.sdf_decoder[1].bias(0);
  hidden_.noalias() = w0.leftCols(used_rows) * inputs_.topRows(used_rows);
  hidden_.colwise() += b0;
  // Column chunks keep the temporaries cache resident. The slope is
  // logistic(z) = exp(z - softplus(z)), which avoids a division.
  act_.resize(hidden_.rows(), B);
  slope_.resize(hidden_.rows(), B);
  constexpr Eigen::Index kChunk = 64;
  Eigen::ArrayXXd z, sp;
  for (Eigen::Index c = 0; c < B; c += kChunk) {
    const Eigen::Index n = std::min(kChunk, B - c);
    z = kSoftplusBeta * hidden_.middleCols(c, n).array();
    sp = z.max(0.0) + (1.0 + (-z.abs()).exp()).log();
    slope_.middleCols(c, n) = (z - sp).exp();
    act_.middleCols(c, n) = sp / kSoftplusBeta;
  }
  const Eigen::RowVectorXd out = (w1 * act_.matrix()).array() + b1;
  values_.assign(out.data(), out.data() + out.size());
}

void SdfBatch::backward(const FieldParams& params, std::span<const double> dvalue,
                        const Eigen::MatrixXd* dfeatures, FieldGrad& grad) const {
  const HashGridConfig& g = params.grid;
  const auto B = static_cast<Eigen::Index>(values_.size());
  if (B == 0) return;
  const int F = g.channels;
  const Eigen::Map<const Eigen::RowVectorXd> dv(dvalue.data(), B);
  const Eigen::MatrixXd w0 = params.sdf_decoder[0].weight.cast<double>();
  const Eigen::VectorXd w1 = params.sdf_decoder[1].weight.cast<double>().row(0).transpose();

  grad.sdf_weight[1].noalias() += dv * act_.matrix().transpose();
  grad.sdf_bias[1](0) += dv.sum();
  Eigen::MatrixXd dh = (w1 * dv).cwiseProduct(slope_.matrix());
  grad.sdf_weight[0].noalias() += dh * inputs_.transpose();
  grad.sdf_bias[0] += dh.rowwise().sum();
  Eigen::MatrixXd dx = w0.rightCols(feature_width_).transpose() * dh;
  if (dfeatures != nullptr) dx += *dfeatures;

  const int active = finest_active_level(psi_, g.levels) + 1;
  for (int l = 0; l < active; ++l) {
    if (!level_active(l, psi_)) break;
    const LevelLattice lat(g, l);
    for (Eigen::Index i = 0; i < B; ++i) {
      bool any = false;
      for (int ch = 0; ch < F; ++ch) any |= dx(l * F + ch, i) != 0.0;
      if (!any) continue;
      const CellLookup c = lat.lookup(points_[static_cast<std::size_t>(i)]);
      for (int k = 0; k < 8; ++k) {
        const double w = c.weight[static_cast<std::size_t>(k)];
        if (w == 0.0) continue;
        for (int ch = 0; ch < F; ++ch)
          grad.add_table(c.entry[static_cast<std::size_t>(k)], ch, F, w * dx(l * F + ch, i));
      }
    }
  }
}

Vec3 SdfBatch::position_gradient(const FieldParams& params, std::size_t i) const {
  return position_gradient(params, i, params.sdf_decoder[0].weight.cast<double>(),
                           params.sdf_decoder[1].weight.cast<double>().row(0).transpose());
}

std::vector<Vec3> SdfBatch::position_gradients(const FieldParams& params) const {
  const Eigen::MatrixXd w0 = params.sdf_decoder[0].weight.cast<double>();
  const Eigen::VectorXd w1 = params.sdf_decoder[1].weight.cast<double>().row(0).transpose();
  std::vector<Vec3> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = position_gradient(params, i, w0, w1);
  return out;
}

Vec3 SdfBatch::position_gradient(const FieldParams& params, std::size_t i, const Eigen::MatrixXd& w0,
                                 const Eigen::VectorXd& w1) const {
  const HashGridConfig& g = params.grid;
  const int F = g.channels;
  const auto col = static_cast<Eigen::Index>(i);
  const Eigen::VectorXd s = slope_.matrix().col(col).cwiseProduct(w1);
  const Eigen::VectorXd dx = w0.transpose() * s;

  Vec3 grad = dx.head<3>();
  const Vec3& p = points_[i];
  for (int l = 0; l < g.levels; ++l) {
    if (!level_active(l, psi_)) break;
    const LevelLattice lat(g, l);
    const CellLookup c = lat.lookup(p);
    for (int a = 0; a < 3; ++a) {
      const double scale = lat.scale[a];
      for (int k = 0; k < 8; ++k) {
        double dw = 1.0;
        for (int b = 0; b < 3; ++b) {
          const int bit = (k >> b) & 1;
          if (b == a) dw *= bit ? 1.0 : -1.0;
          else dw *= bit ? c.frac[b] : 1.0 - c.frac[b];
        }
        if (dw == 0.0) continue;
        const std::size_t base = static_cast<std::size_t>(c.entry[static_cast<std::size_t>(k)]) * F;
        double acc = 0.0;
        for (int ch = 0; ch < F; ++ch) acc += dx(3 + l * F + ch) * params.table[base + ch];
        grad[a] += acc * dw * scale;
      }
    }
  }
  for (int a = 0; a < 3; ++a)
    if (clamped_[i][static_cast<std::size_t>(a)]) grad[a] = 0.0;
  return grad;
}

// --- ColorBatch -------------------------------------------------------------

void ColorBatch::evaluate(const FieldParams& params, Eigen::MatrixXd inputs) {
  const std::size_t n = params.color_decoder.size();
  activations_.assign(1, std::move(inputs));
  pre_.clear();
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = params.color_decoder[l];
    Eigen::MatrixXd z = layer.weight.cast<double>() * activations_.back();
    z.colwise() += layer.bias.cast<double>();
    pre_.push_back(z);
    if (l + 1 < n) activations_.push_back(z.cwiseMax(0.0));
    else out_ = z.unaryExpr([](double v) { return logistic(v); });
  }
}

Eigen::MatrixXd ColorBatch::backward(const FieldParams& params, const Eigen::MatrixXd& drgb,
                                     FieldGrad& grad) const {
  const std::size_t n = params.color_decoder.size();
  Eigen::MatrixXd d = drgb.cwiseProduct(out_.cwiseProduct((1.0 - out_.array()).matrix()));
  for (std::size_t l = n; l-- > 0;) {
    grad.color_weight[l].noalias() += d * activations_[l].transpose();
    grad.color_bias[l] += d.rowwise().sum();
    Eigen::MatrixXd da = params.color_decoder[l].weight.cast<double>().transpose() * d;
    if (l == 0) return da;
    d = da.cwiseProduct(pre_[l - 1].unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  }
  return {};
}

// --- single-point helpers ----------------------------------------------------

Eigen::VectorXd encode(const Vec3& x, const FieldParams& params, double psi) {
  SdfBatch batch;
  const Vec3 pts[1] = {x};
  batch.evaluate(params, pts, psi);
  return batch.features(0);
}

double sdf(const Vec3& x, const FieldParams& params, double psi) {
  if (params.sdf_override) return params.sdf_override(x);
  SdfBatch batch;
  const Vec3 pts[1] = {x};
  batch.evaluate(params, pts, psi);
  return batch.value(0);
}

double gradient_step(const FieldParams& params, double psi) {
  return params.grid.cell_size(finest_active_level(psi, params.grid.levels));
}

Vec3 sdf_gradient(const Vec3& x, const FieldParams& params, double psi, double eps) {
  return central_gradient([&](const Vec3& p) { return sdf(p, params, psi); }, x, eps);
}

Vec3 sdf_gradient(const Vec3& x, const FieldParams& params, double psi) {
  return sdf_gradient(x, params, psi, gradient_step(params, psi));
}

Rgb color(const Vec3& x, const Vec3& view_direction, const Vec3& normal,
          const FieldParams& params, double psi) {
  const Eigen::VectorXd feat = encode(x, params, psi);
  Eigen::MatrixXd in(feat.size() + 6, 1);
  in.col(0) << feat, view_direction, normal;
  ColorBatch batch;
  batch.evaluate(params, std::move(in));
  return batch.value(0);
}

}  // namespace nbvsdf
