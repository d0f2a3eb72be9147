#include "nbvsdf/planner.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace nbvsdf {

WarpResult warp_to_view(const RenderImage& rendered, const CameraView& src, const CameraView& dst) {
  src.validate();
  dst.validate();
  if (rendered.width != src.width || rendered.height != src.height)
    throw Error("warp_to_view: rendered raster does not match the source view");
  WarpResult out;
  out.image = Image(dst.width, dst.height, 3);
  out.mask = Image(dst.width, dst.height, 1);
  const Vec2 none(std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN());
  out.projected.assign(rendered.pixels.size(), none);
  std::vector<double> zbuf(static_cast<std::size_t>(dst.width) * dst.height, std::numeric_limits<double>::infinity());

  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const RenderOutput& px = rendered.at(x, y);
      if (!(px.silhouette > 0.5)) continue;
      if (!std::isfinite(px.depth)) throw Error("warp_to_view: non-finite source depth");
      const Ray ray = generate_ray(src, x + 0.5, y + 0.5);
      const Vec3 world = ray.origin + px.depth * ray.direction;
      const Vec3 cam = dst.rotation * world + dst.translation;
      if (cam.z() <= 0.0) continue;
      const Vec2 uv(dst.fx * cam.x() / cam.z() + dst.cx, dst.fy * cam.y() / cam.z() + dst.cy);
      const std::size_t src_index = static_cast<std::size_t>(y) * src.width + x;
      out.projected[src_index] = uv;
      const double fu = std::floor(uv.x()), fv = std::floor(uv.y());
      if (fu < 0.0 || fv < 0.0 || fu >= dst.width || fv >= dst.height) continue;
      const int u = static_cast<int>(fu), v = static_cast<int>(fv);
      const std::size_t d = static_cast<std::size_t>(v) * dst.width + u;
      if (cam.z() >= zbuf[d]) continue;
      zbuf[d] = cam.z();
      out.image.set_vec3(u, v, px.rgb);
      out.mask.at(u, v, 0) = 1.0f;
    }
  }
  return out;
}

CandidateScore warp_difference(const WarpResult& warp, const Image& target) {
  if (target.width != warp.image.width || target.height != warp.image.height || target.channels != 3)
    throw Error("warp_difference: target raster does not match the warp");
  CandidateScore s;
  std::size_t covered = 0;
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      if (warp.mask.at(x, y, 0) < 0.5f) continue;
      ++covered;
      for (int c = 0; c < 3; ++c)
        s.score += std::abs(static_cast<double>(warp.image.at(x, y, c)) - static_cast<double>(target.at(x, y, c)));
    }
  }
  s.degenerate = covered == 0;
  return s;
}

PlannerState::PlannerState(std::vector<CameraView> candidate_poses) : poses(std::move(candidate_poses)) {
  remaining.resize(poses.size());
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
}

bool PlannerState::captured(std::size_t id) const {
  return std::any_of(training.begin(), training.end(), [id](const TrainView& v) { return v.id == id; });
}

void PlannerState::add(TrainView view) {
  const auto it = std::find(remaining.begin(), remaining.end(), view.id);
  if (it == remaining.end()) throw Error("PlannerState::add: candidate " + std::to_string(view.id) + " is not available");
  remaining.erase(it);
  training.push_back(std::move(view));
}

std::size_t closest_training_view(const CameraView& pose, std::span<const TrainView> training) {
  if (training.empty()) throw Error("warping_score: no training views");
  const Vec3 c = pose.center();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < training.size(); ++i) {
    const double d = (training[i].view.center() - c).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace {

CameraView at_resolution(const CameraView& view, int resolution) {
  const int w = resolution;
  const int h = std::max(1, static_cast<int>(std::lround(static_cast<double>(resolution) * view.height / view.width)));
  return view.scaled(w, h);
}

}  // namespace

CandidateScore warping_score(const CameraView& candidate, std::span<const TrainView> training,
                             const FieldParams& params, double psi, const PlannerConfig& config) {
  if (config.resolution < 1) throw Error("warping_score: planner resolution must be positive");
  const TrainView& ref = training[closest_training_view(candidate, training)];
  const CameraView src = at_resolution(candidate, config.resolution);
  const CameraView dst = at_resolution(ref.view, config.resolution);
  const RenderImage rendered = render_view(src, params, psi, config.render, 0);
  const WarpResult warp = warp_to_view(rendered, src, dst);
  const Image target = ref.rgb.width == dst.width && ref.rgb.height == dst.height
                           ? ref.rgb
                           : resample(ref.rgb, dst.width, dst.height);
  CandidateScore s = warp_difference(warp, target);
  if (!std::isfinite(s.score)) throw Error("warping_score: non-finite score");
  return s;
}

std::size_t select_next(PlannerState& state, const FieldParams& params, double psi,
                        const PlannerConfig& config, long iteration) {
  if (state.remaining.empty()) throw Error("select_next: no candidates left");
  PlanningRound round;
  round.iteration = iteration;
  round.scores.resize(state.remaining.size());
  parallel_for(state.remaining.size(), [&](std::size_t i) {
    const std::size_t id = state.remaining[i];
    CandidateScore s = warping_score(state.poses[id], state.training, params, psi, config);
    s.candidate_id = id;
    round.scores[i] = s;
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < round.scores.size(); ++i)
    if (round.scores[i].score > round.scores[best].score) best = i;
  round.chosen_id = round.scores[best].candidate_id;
  state.trace.push_back(std::move(round));
  return state.trace.back().chosen_id;
}

KMeansResult kmeans(std::span<const Vec3> points, std::size_t k, std::uint64_t seed, int iterations) {
  if (k == 0) throw Error("kmeans: k must be positive");
  if (k > points.size()) throw Error("kmeans: k exceeds the number of points");
  Rng rng(seed);
  KMeansResult r;
  r.centroids.push_back(points[rng.index(points.size())]);
  std::vector<double> d2(points.size());
  while (r.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& c : r.centroids) best = std::min(best, (points[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    std::size_t pick = points.size() - 1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(points.size());
    }
    r.centroids.push_back(points[pick]);
  }

  r.assignment.assign(points.size(), 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (points[i] - r.centroids[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (r.assignment[i] != best) changed = true;
      r.assignment[i] = best;
    }
    if (!changed) break;
    std::vector<Vec3> sum(k, Vec3::Zero());
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sum[r.assignment[i]] += points[i];
      ++count[r.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (count[c] > 0) r.centroids[c] = sum[c] / static_cast<double>(count[c]);
  }
  return r;
}

namespace {

std::vector<Vec3> centers_of(std::span<const CameraView> views) {
  std::vector<Vec3> c;
  c.reserve(views.size());
  for (const CameraView& v : views) c.push_back(v.center());
  return c;
}

std::size_t nearest_index(std::span<const Vec3> points, const Vec3& q, const std::vector<bool>& taken) {
  std::size_t best = points.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (taken[i]) continue;
    const double d = (points[i] - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

std::vector<std::size_t> select_initial(std::span<const CameraView> candidates, std::size_t k,
                                        std::uint64_t seed) {
  if (k > candidates.size())
    throw Error("select_initial: k = " + std::to_string(k) + " exceeds " + std::to_string(candidates.size()) +
                " candidates");
  const std::vector<Vec3> centers = centers_of(candidates);
  const KMeansResult km = kmeans(centers, k, seed);
  std::vector<bool> taken(centers.size(), false);
  std::vector<std::size_t> picks;
  for (const Vec3& c : km.centroids) {
    const std::size_t i = nearest_index(centers, c, taken);
    taken[i] = true;
    picks.push_back(i);
  }
  return picks;
}

Policy parse_policy(const std::string& name) {
  if (name == "planning") return Policy::Planning;
  if (name == "random") return Policy::Random;
  if (name == "cluster") return Policy::Cluster;
  if (name == "farthest") return Policy::Farthest;
  throw Error("unknown policy '" + name + "' (expected planning, random, cluster or farthest)");
}

std::string policy_name(Policy policy) {
  switch (policy) {
    case Policy::Planning: return "planning";
    case Policy::Random: return "random";
    case Policy::Cluster: return "cluster";
    case Policy::Farthest: return "farthest";
  }
  return "unknown";
}

std::vector<std::size_t> baseline_select(Policy policy, std::span<const CameraView> candidates,
                                         std::size_t budget, std::uint64_t seed) {
  if (budget > candidates.size())
    throw Error("baseline_select: budget " + std::to_string(budget) + " exceeds " +
                std::to_string(candidates.size()) + " candidates");
  switch (policy) {
    case Policy::Random: {
      std::vector<std::size_t> ids(candidates.size());
      std::iota(ids.begin(), ids.end(), std::size_t{0});
      Rng rng(seed);
      for (std::size_t i = 0; i < budget; ++i) std::swap(ids[i], ids[i + rng.index(ids.size() - i)]);
      ids.resize(budget);
      return ids;
    }
    case Policy::Cluster:
      return select_initial(candidates, budget, seed);
    case Policy::Farthest: {
      if (budget == 0) return {};
      const std::vector<Vec3> centers = centers_of(candidates);
      const Vec3 mean = std::accumulate(centers.begin(), centers.end(), Vec3(Vec3::Zero())) /
                        static_cast<double>(centers.size());
      std::vector<bool> taken(centers.size(), false);
      std::vector<std::size_t> picks{nearest_index(centers, mean, taken)};
      taken[picks.front()] = true;
      std::vector<double> gap(centers.size(), std::numeric_limits<double>::infinity());
      while (picks.size() < budget) {
        const Vec3& last = centers[picks.back()];
        std::size_t best = centers.size();
        double best_gap = -1.0;
        for (std::size_t i = 0; i < centers.size(); ++i) {
          gap[i] = std::min(gap[i], (centers[i] - last).squaredNorm());
          if (!taken[i] && gap[i] > best_gap) {
            best_gap = gap[i];
            best = i;
          }
        }
        taken[best] = true;
        picks.push_back(best);
      }
      return picks;
    }
    case Policy::Planning:
      break;
  }
  throw Error("baseline_select: planning is not an up-front policy");
}

}  // namespace nbvsdf
