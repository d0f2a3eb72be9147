#include "nbvsdf/training.hpp"

#include <cmath>
#include <numbers>

namespace nbvsdf {

namespace {

const std::array<Vec3, 3> kAxes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double loss_rgb(std::span<const Rgb> rendered, std::span<const Rgb> target) {
  if (rendered.empty()) throw Error("loss_rgb: empty batch");
  if (rendered.size() != target.size()) throw Error("loss_rgb: batch size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) acc += (rendered[i] - target[i]).cwiseAbs().sum();
  return acc / static_cast<double>(rendered.size());
}

double loss_normal(std::span<const Vec3> rendered, std::span<const Vec3> target,
                   std::span<const double> mask) {
  if (rendered.size() != target.size() || rendered.size() != mask.size())
    throw Error("loss_normal: batch size mismatch");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (mask[i] <= 0.5) continue;
    acc += std::abs(1.0 - rendered[i].dot(target[i]));
    ++n;
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

double loss_total(const LossBreakdown& c, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {
      {"rgb", c.rgb}, {"normal", c.normal}, {"eikonal", c.eikonal}, {"dir_hessian", c.dir_hessian}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw Error(std::string("loss_total: non-finite component ") + name);
  return c.rgb + w.normal * c.normal + w.eikonal * c.eikonal + w.dir_hessian * c.dir_hessian;
}

double loss_eikonal(std::span<const Vec3> points, const FieldParams& params, double psi) {
  return loss_eikonal(points, [&](const Vec3& x) { return sdf(x, params, psi); },
                      gradient_step(params, psi));
}

double loss_dir_hessian(std::span<const Vec3> points, const FieldParams& params, double psi,
                        double delta) {
  return loss_dir_hessian(points, [&](const Vec3& x) { return sdf(x, params, psi); }, delta,
                          gradient_step(params, psi));
}

// --- RegularizerBatch ----------------------------------------------------------

RegularizerBatch::Values RegularizerBatch::evaluate(const FieldParams& params, double psi,
                                                    std::span<const Vec3> points, double delta,
                                                    std::span<const double> known) {
  if (points.empty()) throw Error("RegularizerBatch: empty point set");
  if (known.size() % 7 != 0 || known.size() / 7 > points.size())
    throw Error("RegularizerBatch: malformed known values");
  eps_ = gradient_step(params, psi);
  delta_ = delta;
  n_ = points.size();
  known_ = known.size() / 7;

  std::vector<Vec3> stencil;
  stencil.reserve(7 * (n_ - known_));
  for (std::size_t i = known_; i < n_; ++i) {
    const Vec3& x = points[i];
    stencil.push_back(x);
    for (const Vec3& a : kAxes) {
      stencil.push_back(x + eps_ * a);
      stencil.push_back(x - eps_ * a);
    }
  }
  values_.assign(known.begin(), known.end());
  if (!stencil.empty()) {
    base_.evaluate(params, stencil, psi);
    if (params.sdf_override) base_.replace_values(params.sdf_override);
    values_.insert(values_.end(), base_.values().begin(), base_.values().end());
  }

  Values out;
  grad_x_.resize(n_);
  valid_.assign(n_, 0);
  stencil.clear();
  for (std::size_t i = 0; i < n_; ++i) {
    Vec3 g;
    for (int a = 0; a < 3; ++a)
      g[a] = (values_[7 * i + 1 + 2 * a] - values_[7 * i + 2 + 2 * a]) / (2.0 * eps_);
    grad_x_[i] = g;
    const double gn = g.norm();
    out.eikonal += (gn - 1.0) * (gn - 1.0);
    if (gn < 1e-8) continue;
    valid_[i] = 1;
    const Vec3 y = points[i] + eps_ * g / gn;
    for (const Vec3& a : kAxes) {
      stencil.push_back(y + eps_ * a);
      stencil.push_back(y - eps_ * a);
    }
  }
  out.eikonal /= static_cast<double>(n_);

  used_ = stencil.size() / 6;
  if (used_ == 0) return out;
  shifted_.evaluate(params, stencil, psi);
  if (params.sdf_override) shifted_.replace_values(params.sdf_override);
  grad_y_.resize(used_);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    if (!valid_[i]) continue;
    Vec3 g;
    for (int a = 0; a < 3; ++a)
      g[a] = (shifted_.value(6 * j + 2 * a) - shifted_.value(6 * j + 2 * a + 1)) / (2.0 * eps_);
    grad_y_[j] = g;
    const double f = values_[7 * i];
    out.dir_hessian += std::exp(-delta_ * std::abs(f)) * std::abs(grad_x_[i].norm() - g.norm()) / eps_;
    ++j;
  }
  out.dir_hessian /= static_cast<double>(used_);
  return out;
}

void RegularizerBatch::backward(const FieldParams& params, double w_eikonal, double w_dir,
                                FieldGrad& grad, std::vector<double>* d_known) const {
  if (params.sdf_override) throw Error("RegularizerBatch::backward: not available with an SDF override");
  std::vector<double> dbase(values_.size(), 0.0);
  std::vector<double> dshift(used_ > 0 ? shifted_.size() : 0, 0.0);
  std::vector<Vec3> pgrad;
  if (used_ > 0 && w_dir != 0.0) pgrad = shifted_.position_gradients(params);
  const double inv2e = 1.0 / (2.0 * eps_);

  std::size_t j = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    const Vec3& g = grad_x_[i];
    const double gn = g.norm();
    Vec3 dg = Vec3::Zero();
    if (gn > 0.0) dg += w_eikonal * 2.0 * (gn - 1.0) / static_cast<double>(n_) * (g / gn);
    if (valid_[i]) {
      if (w_dir != 0.0) {
        const double c = w_dir / static_cast<double>(used_);
        const Vec3 n = g / gn;
        const Vec3& gy = grad_y_[j];
        const double gyn = gy.norm();
        const double f = values_[7 * i];
        const double rbf = std::exp(-delta_ * std::abs(f));
        const double d = gn - gyn;
        dbase[7 * i] += c * (-delta_ * sign(f) * rbf * std::abs(d) / eps_);
        const double s = c * sign(d) * rbf / eps_;
        dg += s * n;
        const Vec3 dgy = gyn > 0.0 ? Vec3(-s * gy / gyn) : Vec3::Zero();
        Vec3 dy = Vec3::Zero();
        for (int a = 0; a < 3; ++a) {
          dshift[6 * j + 2 * a] += dgy[a] * inv2e;
          dshift[6 * j + 2 * a + 1] -= dgy[a] * inv2e;
          dy += dgy[a] * (pgrad[6 * j + 2 * a] - pgrad[6 * j + 2 * a + 1]) * inv2e;
        }
        // y = x + eps * g / |g|
        dg += eps_ * (dy - n * n.dot(dy)) / gn;
      }
      ++j;
    }
    for (int a = 0; a < 3; ++a) {
      dbase[7 * i + 1 + 2 * a] += dg[a] * inv2e;
      dbase[7 * i + 2 + 2 * a] -= dg[a] * inv2e;
    }
  }
  if (d_known) d_known->assign(dbase.begin(), dbase.begin() + static_cast<std::ptrdiff_t>(7 * known_));
  if (n_ > known_) {
    const std::span<const double> own(dbase.data() + 7 * known_, dbase.size() - 7 * known_);
    base_.backward(params, own, nullptr, grad);
  }
  if (used_ > 0) shifted_.backward(params, dshift, nullptr, grad);
}

// --- Adam ------------------------------------------------------------------------

double cosine_factor(long iteration, long hold, long total) {
  if (iteration <= hold || total <= hold) return 1.0;
  const double p = std::min(1.0, static_cast<double>(iteration - hold) / static_cast<double>(total - hold));
  return 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

Adam::Adam(const FieldParams& params, AdamConfig config)
    : config_(config), table_m_(params.table.size(), 0.0f), table_v_(params.table.size(), 0.0f) {
  for (const auto* layers : {&params.sdf_decoder, &params.color_decoder}) {
    for (const auto& l : *layers) {
      wm_.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
      bm_.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
  }
  wv_ = wm_;
  bv_ = bm_;
}

void Adam::step(FieldParams& params, const FieldGrad& grad, double lr_factor) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto update = [&](double& m, double& v, double g, double lr) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    return lr * (m / c1) / (std::sqrt(v / c2) + config_.eps);
  };

  const double lr_t = config_.lr_table * lr_factor;
  const auto F = static_cast<std::size_t>(params.grid.channels);
  for (std::uint32_t e : grad.touched) {
    for (std::size_t c = 0; c < F; ++c) {
      const std::size_t k = static_cast<std::size_t>(e) * F + c;
      double m = table_m_[k], v = table_v_[k];
      params.table[k] = static_cast<float>(params.table[k] - update(m, v, grad.table[k], lr_t));
      table_m_[k] = static_cast<float>(m);
      table_v_[k] = static_cast<float>(v);
    }
  }

  const double lr_d = config_.lr_decoder * lr_factor;
  auto dense = [&](DenseLayer& layer, const Eigen::MatrixXd& gw, const Eigen::VectorXd& gb,
                   std::size_t slot) {
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      double& m = wm_[slot].data()[i];
      double& v = wv_[slot].data()[i];
      layer.weight.data()[i] =
          static_cast<float>(layer.weight.data()[i] - update(m, v, gw.data()[i], lr_d));
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      double& m = bm_[slot].data()[i];
      double& v = bv_[slot].data()[i];
      layer.bias[i] = static_cast<float>(layer.bias[i] - update(m, v, gb[i], lr_d));
    }
  };
  std::size_t slot = 0;
  for (std::size_t l = 0; l < params.sdf_decoder.size(); ++l, ++slot)
    dense(params.sdf_decoder[l], grad.sdf_weight[l], grad.sdf_bias[l], slot);
  for (std::size_t l = 0; l < params.color_decoder.size(); ++l, ++slot)
    dense(params.color_decoder[l], grad.color_weight[l], grad.color_bias[l], slot);
  params.tau_raw = static_cast<float>(params.tau_raw - update(tau_m_, tau_v_, grad.tau_raw, lr_d));
}

// --- batches -----------------------------------------------------------------------

RayBatch draw_batch(std::span<const TrainView> views, int rays, int uniform_points,
                    const Aabb& bounds, const RenderConfig& render, Rng& rng) {
  if (views.empty()) throw Error("draw_batch: no training views");
  std::vector<std::size_t> offsets{0};
  for (const TrainView& v : views) offsets.push_back(offsets.back() + v.rgb.pixel_count());
  RayBatch b;
  for (int r = 0; r < rays; ++r) {
    const std::size_t k = rng.index(offsets.back());
    const auto vi = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), k) -
                                             offsets.begin() - 1);
    const TrainView& v = views[vi];
    const std::size_t local = k - offsets[vi];
    const int x = static_cast<int>(local % static_cast<std::size_t>(v.rgb.width));
    const int y = static_cast<int>(local / static_cast<std::size_t>(v.rgb.width));
    const CameraView cam = v.view.scaled(v.rgb.width, v.rgb.height);
    b.queries.push_back(make_query(generate_ray(cam, x + 0.5, y + 0.5), render));
    b.rgb.push_back(v.rgb.vec3(x, y));
    b.normal.push_back(v.normal.data.empty() ? Vec3::Zero() : v.normal.vec3(x, y));
    b.mask.push_back(v.mask.data.empty() ? 0.0 : v.mask.at(x, y, 0));
  }
  for (int i = 0; i < uniform_points; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = rng.uniform(bounds.min[a], bounds.max[a]);
    b.uniform_points.push_back(p);
  }
  return b;
}

LossBreakdown evaluate_batch(const FieldParams& params, double psi, const RayBatch& batch,
                             const TrainConfig& config, bool use_normals, FieldGrad* grad) {
  const std::size_t n = batch.queries.size();
  VolumeRenderer renderer(params, psi, config.render);
  const auto& out = renderer.forward(batch.queries, grad != nullptr);

  LossBreakdown loss;
  std::vector<Rgb> rgb(n);
  std::vector<Vec3> normal(n);
  for (std::size_t i = 0; i < n; ++i) {
    rgb[i] = out[i].rgb;
    normal[i] = out[i].normal;
  }
  loss.rgb = loss_rgb(rgb, batch.rgb);
  const bool normals = use_normals && config.weights.normal != 0.0;
  if (normals) loss.normal = loss_normal(normal, batch.normal, batch.mask);

  // Kept ray samples reuse the renderer's normal stencils.
  std::vector<Vec3> reg_points = renderer.kept_points();
  const std::vector<double> known = renderer.kept_values();
  reg_points.insert(reg_points.end(), batch.uniform_points.begin(), batch.uniform_points.end());
  RegularizerBatch reg;
  const bool regularize = !reg_points.empty() &&
                          (config.weights.eikonal != 0.0 || config.weights.dir_hessian != 0.0);
  if (regularize) {
    const auto v = reg.evaluate(params, psi, reg_points, config.delta, known);
    loss.eikonal = v.eikonal;
    loss.dir_hessian = v.dir_hessian;
  }
  loss.total = loss_total(loss, config.weights);
  if (!grad) return loss;

  std::vector<Vec3> d_rgb(n), d_normal;
  for (std::size_t i = 0; i < n; ++i)
    d_rgb[i] = (rgb[i] - batch.rgb[i]).unaryExpr([](double v) { return sign(v); }) /
               static_cast<double>(n);
  if (normals) {
    std::size_t masked = 0;
    for (double m : batch.mask) masked += m > 0.5;
    d_normal.assign(n, Vec3::Zero());
    for (std::size_t i = 0; i < n && masked > 0; ++i) {
      if (batch.mask[i] <= 0.5) continue;
      const double s = sign(1.0 - normal[i].dot(batch.normal[i]));
      d_normal[i] = -s * config.weights.normal / static_cast<double>(masked) * batch.normal[i];
    }
  }
  std::vector<double> d_known;
  if (regularize) reg.backward(params, config.weights.eikonal, config.weights.dir_hessian, *grad, &d_known);
  renderer.backward(d_rgb, d_normal, *grad, d_known);
  return loss;
}

TrainState::TrainState(FieldParams p, const TrainConfig& config, std::uint64_t s)
    : params(std::move(p)), optimizer(params, config.adam), grad(params), seed(s) {}

LossBreakdown train_step(TrainState& state, std::span<const TrainView> views,
                         const TrainConfig& config, bool use_normals) {
  const double psi = config.schedule.psi(state.iteration);
  Rng rng = Rng::stream(state.seed, static_cast<std::uint64_t>(state.iteration));
  RayBatch batch = draw_batch(views, config.batch_rays, config.uniform_points, state.params.grid.bounds,
                              config.render, rng);
  std::vector<Rng> jitter;
  jitter.reserve(batch.queries.size());
  const std::uint64_t jitter_seed = rng.next();
  for (std::size_t r = 0; r < batch.queries.size(); ++r) jitter.push_back(Rng::stream(jitter_seed, r));
  VolumeRenderer(state.params, psi, config.render).sample(batch.queries, jitter);

  state.grad.clear();
  const LossBreakdown loss = evaluate_batch(state.params, psi, batch, config, use_normals, &state.grad);
  if (!state.grad.all_finite())
    throw Error("train_step: non-finite gradient at iteration " + std::to_string(state.iteration) +
                " (loss rgb " + std::to_string(loss.rgb) + ", normal " + std::to_string(loss.normal) +
                ", eikonal " + std::to_string(loss.eikonal) + ", dir " + std::to_string(loss.dir_hessian) +
                ", tau " + std::to_string(state.params.tau()) + ")");
  const double lr = cosine_factor(state.iteration, config.schedule.threshold, config.total_iters);
  state.optimizer.step(state.params, state.grad, lr);
  ++state.iteration;
  return loss;
}

// --- gradient check -------------------------------------------------------------------

GradcheckReport gradcheck(const FieldParams& params, double psi, const RayBatch& batch,
                          const TrainConfig& config, const GradcheckOptions& options) {
  if (options.probes <= 0) throw Error("gradcheck: empty probe set");
  TrainConfig cfg = config;
  cfg.render.prune_threshold = -1.0;  // a fixed sample set keeps the loss smooth in the parameters

  FieldParams work = params;
  FieldGrad grad(work);
  GradcheckReport report;
  report.loss = evaluate_batch(work, psi, batch, cfg, true, &grad).total;
  if (options.corrupt) options.corrupt(grad);

  struct Probe {
    float* value;
    double analytic;
  };
  Rng rng(options.seed);
  std::vector<std::pair<std::string, std::vector<Probe>>> groups;

  {
    std::vector<Probe> all;
    const auto F = static_cast<std::size_t>(work.grid.channels);
    for (std::uint32_t e : grad.touched)
      for (std::size_t c = 0; c < F; ++c)
        all.push_back({&work.table[e * F + c], grad.table[e * F + c]});
    groups.emplace_back("hash_table", std::move(all));
  }
  auto dense = [](std::vector<DenseLayer>& layers, const std::vector<Eigen::MatrixXd>& gw,
                  const std::vector<Eigen::VectorXd>& gb) {
    std::vector<Probe> all;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (Eigen::Index i = 0; i < layers[l].weight.size(); ++i)
        all.push_back({&layers[l].weight.data()[i], gw[l].data()[i]});
      for (Eigen::Index i = 0; i < layers[l].bias.size(); ++i)
        all.push_back({&layers[l].bias[i], gb[l][i]});
    }
    return all;
  };
  groups.emplace_back("sdf_decoder", dense(work.sdf_decoder, grad.sdf_weight, grad.sdf_bias));
  groups.emplace_back("color_decoder", dense(work.color_decoder, grad.color_weight, grad.color_bias));
  groups.emplace_back("tau", std::vector<Probe>{{&work.tau_raw, grad.tau_raw}});

  // One probe for tau, the rest split 1/2 : 1/4 : 1/4 over table and decoders.
  const int total = options.probes;
  std::array<int, 4> quota{};
  quota[3] = total >= 4 ? 1 : 0;
  quota[0] = (total - quota[3]) / 2;
  quota[1] = (total - quota[3] - quota[0]) / 2;
  quota[2] = total - quota[3] - quota[0] - quota[1];

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    auto& [name, pool] = groups[gi];
    GradcheckGroup result;
    result.name = name;
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(quota[gi]), pool.size());
    for (std::size_t k = 0; k < take; ++k) {
      std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
      Probe& p = pool[k];
      const float x = *p.value;
      // Small steps keep the stencil off the kinks of the L1 terms and ReLUs;
      // the loss is evaluated in double so round-off stays far below tolerance.
      const double h = 1e-6 * std::max(1.0, std::abs(static_cast<double>(x)));
      const float xp = static_cast<float>(x + h);
      const float xm = static_cast<float>(x - h);
      *p.value = xp;
      const double lp = evaluate_batch(work, psi, batch, cfg, true, nullptr).total;
      *p.value = xm;
      const double lm = evaluate_batch(work, psi, batch, cfg, true, nullptr).total;
      *p.value = x;
      const double numeric = (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
      const double denom = std::max({std::abs(numeric), std::abs(p.analytic), 1e-6});
      const double rel = std::abs(numeric - p.analytic) / denom;
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.probes;
      result.passed += rel < options.tolerance;
    }
    report.probes += result.probes;
    report.passed += result.passed;
    report.groups.push_back(result);
  }
  if (report.probes == 0) throw Error("gradcheck: empty probe set");
  report.pass = report.passed >= options.pass_fraction * report.probes;
  return report;
}

}  // namespace nbvsdf
