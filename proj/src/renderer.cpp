#include "nbvsdf/renderer.hpp"

#include <cmath>
#include <numbers>

namespace nbvsdf {

namespace {

double log_logistic(double a) {
  // log(1 / (1 + exp(-a)))
  if (a < -30.0) return a;
  return -std::log1p(std::exp(-a));
}

double logistic(double a) {
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

const std::array<Vec3, 3> kAxes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};

}  // namespace

// --- camera ------------------------------------------------------------------

Mat3 CameraView::intrinsics() const {
  Mat3 k = Mat3::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

Mat4 CameraView::world_to_camera() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

CameraView CameraView::scaled(int new_width, int new_height) const {
  CameraView v = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  v.fx *= sx;
  v.cx *= sx;
  v.fy *= sy;
  v.cy *= sy;
  v.width = new_width;
  v.height = new_height;
  return v;
}

std::optional<Vec2> CameraView::project(const Vec3& world) const {
  const Vec3 c = rotation * world + translation;
  if (c.z() <= 0.0) return std::nullopt;
  return Vec2(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy);
}

void CameraView::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error("camera: empty raster");
  if (!((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6))
    throw Error("camera: rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-6) throw Error("camera: rotation must have det +1");
}

CameraView CameraView::look_at(const Vec3& eye, const Vec3& target, int width, int height,
                               double fov_y_deg, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up_dir = up.normalized();
  if (std::abs(forward.dot(up_dir)) > 0.999) up_dir = std::abs(forward.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 right = forward.cross(up_dir).normalized();
  const Vec3 down = forward.cross(right);
  CameraView v;
  v.rotation.row(0) = right.transpose();
  v.rotation.row(1) = down.transpose();
  v.rotation.row(2) = forward.transpose();
  v.translation = -v.rotation * eye;
  v.width = width;
  v.height = height;
  v.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
  v.fx = v.fy;
  v.cx = 0.5 * width;
  v.cy = 0.5 * height;
  return v;
}

Ray generate_ray(const CameraView& view, double u, double v) {
  const Vec3 dir_cam((u - view.cx) / view.fx, (v - view.cy) / view.fy, 1.0);
  return {view.center(), (view.rotation.transpose() * dir_cam).normalized()};
}

std::optional<std::pair<double, double>> ray_sphere_range(const Ray& ray, double radius) {
  const double b = ray.origin.dot(ray.direction);
  const double c = ray.origin.squaredNorm() - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  const double t1 = -b + s;
  if (t1 <= 0.0) return std::nullopt;
  return std::make_pair(std::max(0.0, -b - s), t1);
}

// --- sampling ------------------------------------------------------------------

std::vector<double> stratified_depths(double near, double far, int n, Rng* jitter) {
  if (!(near < far)) throw Error("stratified_depths: near must be < far");
  std::vector<double> t(static_cast<std::size_t>(n));
  const double step = (far - near) / n;
  for (int j = 0; j < n; ++j) {
    const double off = jitter ? jitter->uniform() : 0.5;
    t[static_cast<std::size_t>(j)] = near + (j + off) * step;
  }
  return t;
}

std::vector<double> importance_depths(std::span<const double> depths,
                                      std::span<const double> weights, int n, Rng* jitter) {
  const std::size_t segs = depths.size() < 2 ? 0 : depths.size() - 1;
  if (segs == 0 || n <= 0) return {};
  std::vector<double> cdf(segs + 1, 0.0);
  for (std::size_t j = 0; j < segs; ++j)
    cdf[j + 1] = cdf[j] + std::max(0.0, weights[j]) + 1e-5;
  const double total = cdf.back();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double u = (k + (jitter ? jitter->uniform() : 0.5)) / n * total;
    const auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), u);
    const std::size_t j = std::min<std::size_t>(segs - 1, static_cast<std::size_t>(it - cdf.begin()) - 1);
    const double span = cdf[j + 1] - cdf[j];
    const double f = span > 0.0 ? std::clamp((u - cdf[j]) / span, 0.0, 1.0) : 0.5;
    out.push_back(depths[j] + f * (depths[j + 1] - depths[j]));
  }
  return out;
}

double logistic_cdf(double y, double tau) { return logistic(tau * y); }

AlphaGrad alpha_with_grad(double sdf_i, double sdf_next, double tau) {
  AlphaGrad g;
  const double ai = tau * sdf_i, an = tau * sdf_next;
  const double delta = log_logistic(an) - log_logistic(ai);
  if (!(delta < 0.0)) return g;
  const double r = std::exp(delta);
  g.value = -std::expm1(delta);
  const double da_i = r * (1.0 - logistic(ai));
  const double da_n = -r * (1.0 - logistic(an));
  g.d_sdf = tau * da_i;
  g.d_sdf_next = tau * da_n;
  g.d_tau = sdf_i * da_i + sdf_next * da_n;
  return g;
}

double alpha(double sdf_i, double sdf_next, double tau) {
  return alpha_with_grad(sdf_i, sdf_next, tau).value;
}

RenderOutput composite(std::span<const double> alphas, std::span<const Rgb> colors,
                       std::span<const double> depths, std::span<const Vec3> normals,
                       const Rgb& background, double far) {
  RenderOutput out;
  double trans = 1.0;
  Vec3 nsum = Vec3::Zero();
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double w = trans * alphas[i];
    out.rgb += w * colors[i];
    out.depth += w * depths[i];
    nsum += w * normals[i];
    out.silhouette += w;
    trans *= 1.0 - alphas[i];
  }
  out.rgb += (1.0 - out.silhouette) * background;
  out.depth += (1.0 - out.silhouette) * far;
  const double n = nsum.norm();
  out.normal = n > 1e-12 ? Vec3(nsum / n) : Vec3::Zero();
  return out;
}

RayQuery make_query(const Ray& ray, const RenderConfig& config) {
  RayQuery q;
  q.ray = ray;
  if (const auto range = ray_sphere_range(ray, config.bound_radius)) {
    q.near = std::max(range->first, config.near_min);
    q.far = range->second;
    q.hit = q.near < q.far;
  }
  if (!q.hit) {
    q.near = 0.0;
    q.far = ray.origin.norm() + config.bound_radius;
  }
  return q;
}

void sample_along_ray(RayQuery& query, const FieldParams& params, double psi,
                      const RenderConfig& config, Rng* jitter) {
  VolumeRenderer r(params, psi, config);
  if (jitter) {
    std::span<Rng> rngs(jitter, 1);
    r.sample(std::span<RayQuery>(&query, 1), rngs);
  } else {
    r.sample(std::span<RayQuery>(&query, 1), {});
  }
}

// --- VolumeRenderer ------------------------------------------------------------

VolumeRenderer::VolumeRenderer(const FieldParams& params, double psi, RenderConfig config)
    : params_(params), psi_(psi), config_(std::move(config)), eps_(gradient_step(params, psi)) {}

void VolumeRenderer::sample(std::span<RayQuery> queries, std::span<Rng> jitter) const {
  const bool use_jitter = config_.jitter && jitter.size() == queries.size();
  std::vector<Vec3> pts;
  std::vector<std::size_t> begin(queries.size() + 1, 0);
  for (std::size_t r = 0; r < queries.size(); ++r) {
    RayQuery& q = queries[r];
    q.depths.clear();
    if (q.hit) {
      q.depths = stratified_depths(q.near, q.far, config_.n_coarse, use_jitter ? &jitter[r] : nullptr);
    }
    begin[r] = pts.size();
    for (double t : q.depths) pts.push_back(q.ray.origin + t * q.ray.direction);
  }
  begin[queries.size()] = pts.size();
  if (config_.n_importance <= 0 || pts.empty()) return;

  SdfBatch batch;
  batch.evaluate(params_, pts, psi_);
  if (params_.sdf_override) batch.replace_values(params_.sdf_override);
  const double tau = params_.tau();
  std::vector<double> w;
  for (std::size_t r = 0; r < queries.size(); ++r) {
    RayQuery& q = queries[r];
    if (q.depths.size() < 2) continue;
    w.assign(q.depths.size() - 1, 0.0);
    double trans = 1.0;
    for (std::size_t j = 0; j + 1 < q.depths.size(); ++j) {
      const double a = alpha(batch.value(begin[r] + j), batch.value(begin[r] + j + 1), tau);
      w[j] = trans * a;
      trans *= 1.0 - a;
    }
    std::vector<double> extra =
        importance_depths(q.depths, w, config_.n_importance, use_jitter ? &jitter[r] : nullptr);
    q.depths.insert(q.depths.end(), extra.begin(), extra.end());
    std::sort(q.depths.begin(), q.depths.end());
    q.depths.erase(std::unique(q.depths.begin(), q.depths.end()), q.depths.end());
  }
}

const std::vector<RenderOutput>& VolumeRenderer::forward(std::span<const RayQuery> queries, bool keep) {
  (void)keep;
  const std::size_t n = queries.size();
  dirs_.resize(n);
  far_.resize(n);
  seg_begin_.assign(n, 0);
  seg_end_.assign(n, 0);
  point_begin_.assign(n, 0);
  segments_.clear();
  kept_segment_.clear();

  std::vector<Vec3> pts;
  for (std::size_t r = 0; r < n; ++r) {
    const RayQuery& q = queries[r];
    dirs_[r] = q.ray.direction;
    far_[r] = q.far;
    point_begin_[r] = pts.size();
    for (double t : q.depths) pts.push_back(q.ray.origin + t * q.ray.direction);
  }
  samples_.evaluate(params_, pts, psi_);
  if (params_.sdf_override) samples_.replace_values(params_.sdf_override);

  const double tau = params_.tau();
  for (std::size_t r = 0; r < n; ++r) {
    const RayQuery& q = queries[r];
    seg_begin_[r] = segments_.size();
    double trans = 1.0;
    for (std::size_t j = 0; j + 1 < q.depths.size(); ++j) {
      Segment s;
      s.ray = r;
      s.point = point_begin_[r] + j;
      s.t = q.depths[j];
      s.dalpha = alpha_with_grad(samples_.value(s.point), samples_.value(s.point + 1), tau);
      s.alpha = s.dalpha.value;
      s.transmittance = trans;
      s.weight = trans * s.alpha;
      trans *= 1.0 - s.alpha;
      const bool keep_sample = config_.prune_threshold < 0.0 || s.weight > config_.prune_threshold;
      if (keep_sample) {
        s.kept = static_cast<long>(kept_segment_.size());
        kept_segment_.push_back(segments_.size());
      }
      segments_.push_back(s);
    }
    seg_end_[r] = segments_.size();
  }

  // Normals by central differences at kept samples.
  const std::size_t k = kept_segment_.size();
  std::vector<Vec3> stencil;
  stencil.reserve(6 * k);
  for (std::size_t i = 0; i < k; ++i) {
    const Vec3& x = samples_.point(segments_[kept_segment_[i]].point);
    for (const Vec3& axis : kAxes) {
      stencil.push_back(x + eps_ * axis);
      stencil.push_back(x - eps_ * axis);
    }
  }
  stencils_.evaluate(params_, stencil, psi_);
  if (params_.sdf_override) stencils_.replace_values(params_.sdf_override);
  kept_grad_.resize(k);
  kept_normal_.resize(k);
  const Eigen::Index lf = params_.grid.feature_width();
  Eigen::MatrixXd color_in(lf + 6, static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    Vec3 g;
    for (int a = 0; a < 3; ++a)
      g[a] = (stencils_.value(6 * i + 2 * a) - stencils_.value(6 * i + 2 * a + 1)) / (2.0 * eps_);
    kept_grad_[i] = g;
    const double gn = g.norm();
    kept_normal_[i] = gn > 1e-12 ? Vec3(g / gn) : Vec3::Zero();
    const Segment& s = segments_[kept_segment_[i]];
    const auto col = static_cast<Eigen::Index>(i);
    color_in.col(col).head(lf) = samples_.features(s.point);
    color_in.col(col).segment<3>(lf) = dirs_[s.ray];
    color_in.col(col).tail<3>() = kept_normal_[i];
  }
  colors_.evaluate(params_, std::move(color_in));

  out_.assign(n, RenderOutput{});
  raw_normal_.assign(n, Vec3::Zero());
  for (std::size_t r = 0; r < n; ++r) {
    RenderOutput& o = out_[r];
    Vec3 nsum = Vec3::Zero();
    for (std::size_t si = seg_begin_[r]; si < seg_end_[r]; ++si) {
      const Segment& s = segments_[si];
      const Rgb c = s.kept >= 0 ? colors_.value(static_cast<std::size_t>(s.kept)) : config_.background;
      o.rgb += s.weight * c;
      o.depth += s.weight * s.t;
      o.silhouette += s.weight;
      if (s.kept >= 0) nsum += s.weight * kept_normal_[static_cast<std::size_t>(s.kept)];
    }
    o.rgb += (1.0 - o.silhouette) * config_.background;
    o.depth += (1.0 - o.silhouette) * far_[r];
    raw_normal_[r] = nsum;
    const double nn = nsum.norm();
    o.normal = nn > 1e-12 ? Vec3(nsum / nn) : Vec3::Zero();
  }
  return out_;
}

void VolumeRenderer::backward(std::span<const Vec3> d_rgb, std::span<const Vec3> d_normal,
                              FieldGrad& grad, std::span<const double> d_kept) const {
  if (params_.sdf_override) throw Error("VolumeRenderer::backward: not available with an SDF override");
  const std::size_t k = kept_segment_.size();
  const Eigen::Index lf = params_.grid.feature_width();
  std::vector<double> ds(samples_.size(), 0.0);
  Eigen::MatrixXd dcolor = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(k));
  std::vector<Vec3> dnhat(k, Vec3::Zero());
  double dtau = 0.0;
  const Rgb& bg = config_.background;

  for (std::size_t r = 0; r < out_.size(); ++r) {
    if (seg_begin_[r] == seg_end_[r]) continue;
    const Vec3 dc = d_rgb.empty() ? Vec3::Zero() : d_rgb[r];
    Vec3 dnraw = Vec3::Zero();
    const double nn = raw_normal_[r].norm();
    if (!d_normal.empty() && nn > 1e-12) {
      const Vec3 nhat = raw_normal_[r] / nn;
      dnraw = (d_normal[r] - nhat * nhat.dot(d_normal[r])) / nn;
    }
    double acc = dc.dot(bg);  // A_{i+1}: gradient carried by everything behind segment i
    for (std::size_t si = seg_end_[r]; si-- > seg_begin_[r];) {
      const Segment& s = segments_[si];
      double g = 0.0;
      if (s.kept >= 0) {
        const auto ki = static_cast<std::size_t>(s.kept);
        g = dc.dot(colors_.value(ki)) + dnraw.dot(kept_normal_[ki]);
        dcolor.col(static_cast<Eigen::Index>(ki)) = s.weight * dc;
        dnhat[ki] = s.weight * dnraw;
      } else {
        g = dc.dot(bg);
      }
      const double da = s.transmittance * (g - acc);
      acc = g * s.alpha + (1.0 - s.alpha) * acc;
      if (da == 0.0) continue;
      ds[s.point] += da * s.dalpha.d_sdf;
      ds[s.point + 1] += da * s.dalpha.d_sdf_next;
      dtau += da * s.dalpha.d_tau;
    }
  }

  Eigen::MatrixXd dfeat = Eigen::MatrixXd::Zero(lf, static_cast<Eigen::Index>(samples_.size()));
  std::vector<double> dstencil(stencils_.size(), 0.0);
  if (k > 0) {
    const Eigen::MatrixXd din = colors_.backward(params_, dcolor, grad);
    for (std::size_t i = 0; i < k; ++i) {
      const auto col = static_cast<Eigen::Index>(i);
      const Segment& s = segments_[kept_segment_[i]];
      dfeat.col(static_cast<Eigen::Index>(s.point)) += din.col(col).head(lf);
      const Vec3 dn = dnhat[i] + Vec3(din.col(col).tail<3>());
      const double gn = kept_grad_[i].norm();
      if (gn <= 1e-12) continue;
      const Vec3& nh = kept_normal_[i];
      const Vec3 dg = (dn - nh * nh.dot(dn)) / gn;
      for (int a = 0; a < 3; ++a) {
        dstencil[6 * i + 2 * a] += dg[a] / (2.0 * eps_);
        dstencil[6 * i + 2 * a + 1] -= dg[a] / (2.0 * eps_);
      }
    }
  }
  if (!d_kept.empty()) {
    if (d_kept.size() != 7 * k) throw Error("VolumeRenderer::backward: d_kept size mismatch");
    for (std::size_t i = 0; i < k; ++i) {
      ds[segments_[kept_segment_[i]].point] += d_kept[7 * i];
      for (std::size_t a = 0; a < 6; ++a) dstencil[6 * i + a] += d_kept[7 * i + 1 + a];
    }
  }
  samples_.backward(params_, ds, &dfeat, grad);
  stencils_.backward(params_, dstencil, nullptr, grad);
  grad.tau_raw += dtau * params_.tau();
}

std::vector<Vec3> VolumeRenderer::kept_points() const {
  std::vector<Vec3> pts;
  pts.reserve(kept_segment_.size());
  for (std::size_t si : kept_segment_) pts.push_back(samples_.point(segments_[si].point));
  return pts;
}

std::vector<double> VolumeRenderer::kept_values() const {
  std::vector<double> v;
  v.reserve(7 * kept_segment_.size());
  for (std::size_t i = 0; i < kept_segment_.size(); ++i) {
    v.push_back(samples_.value(segments_[kept_segment_[i]].point));
    for (std::size_t a = 0; a < 6; ++a) v.push_back(stencils_.value(6 * i + a));
  }
  return v;
}

// --- images --------------------------------------------------------------------

RenderOutput render_pixel(const CameraView& view, double u, double v, const FieldParams& params,
                          double psi, const RenderConfig& config, std::uint64_t seed) {
  RayQuery q = make_query(generate_ray(view, u, v), config);
  VolumeRenderer r(params, psi, config);
  Rng rng = Rng::stream(seed, 0);
  r.sample(std::span<RayQuery>(&q, 1), std::span<Rng>(&rng, 1));
  return r.forward(std::span<const RayQuery>(&q, 1), false).front();
}

RenderImage render_view(const CameraView& view, const FieldParams& params, double psi,
                        const RenderConfig& config, std::uint64_t seed) {
  view.validate();
  RenderImage img;
  img.width = view.width;
  img.height = view.height;
  img.pixels.resize(static_cast<std::size_t>(view.width) * view.height);
  parallel_for(static_cast<std::size_t>(view.height), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    std::vector<RayQuery> queries;
    std::vector<Rng> rngs;
    for (int x = 0; x < view.width; ++x) {
      queries.push_back(make_query(generate_ray(view, x + 0.5, y + 0.5), config));
      rngs.push_back(Rng::stream(seed, static_cast<std::uint64_t>(y) * view.width + x));
    }
    VolumeRenderer r(params, psi, config);
    r.sample(queries, rngs);
    const auto& out = r.forward(queries, false);
    for (int x = 0; x < view.width; ++x) {
      const RenderOutput& o = out[static_cast<std::size_t>(x)];
      if (!o.rgb.allFinite() || !std::isfinite(o.depth) || !o.normal.allFinite())
        throw Error("render_view: non-finite output");
      img.pixels[static_cast<std::size_t>(y) * view.width + x] = o;
    }
  });
  return img;
}

Image RenderImage::rgb() const {
  Image im(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) im.set_vec3(x, y, at(x, y).rgb);
  return im;
}

Image RenderImage::depth() const {
  Image im(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) im.at(x, y, 0) = static_cast<float>(at(x, y).depth);
  return im;
}

Image RenderImage::silhouette() const {
  Image im(width, height, 1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) im.at(x, y, 0) = static_cast<float>(at(x, y).silhouette);
  return im;
}

Image RenderImage::normal() const {
  Image im(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) im.set_vec3(x, y, at(x, y).normal);
  return im;
}

}  // namespace nbvsdf
