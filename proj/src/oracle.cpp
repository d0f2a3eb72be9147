#include "nbvsdf/oracle.hpp"

#include "nbvsdf/io.hpp"

#include <cmath>

#include "json.hpp"

namespace nbvsdf {

SceneNode SceneNode::sphere(const Vec3& center, double radius) {
  SceneNode n;
  n.kind = Kind::Sphere;
  n.center = center;
  n.radius = radius;
  return n;
}

SceneNode SceneNode::box(const Vec3& center, const Vec3& half_extents) {
  SceneNode n;
  n.kind = Kind::Box;
  n.center = center;
  n.half_extents = half_extents;
  return n;
}

SceneNode SceneNode::torus(const Vec3& center, double major_radius, double minor_radius) {
  SceneNode n;
  n.kind = Kind::Torus;
  n.center = center;
  n.major_radius = major_radius;
  n.radius = minor_radius;
  return n;
}

SceneNode SceneNode::make_union(std::vector<SceneNode> children) {
  SceneNode n;
  n.kind = Kind::Union;
  n.children = std::move(children);
  return n;
}

SceneNode SceneNode::make_intersection(std::vector<SceneNode> children) {
  SceneNode n;
  n.kind = Kind::Intersection;
  n.children = std::move(children);
  return n;
}

SceneNode SceneNode::smooth_union(SceneNode a, SceneNode b, double k) {
  SceneNode n;
  n.kind = Kind::SmoothUnion;
  n.blend = k;
  n.children = {std::move(a), std::move(b)};
  return n;
}

SceneNode SceneNode::transform(SceneNode child, const Mat3& rotation, const Vec3& translation) {
  SceneNode n;
  n.kind = Kind::Transform;
  n.rotation = rotation;
  n.translation = translation;
  n.children = {std::move(child)};
  return n;
}

Rgb Albedo::at(const Vec3& x) const {
  if (kind == Kind::Constant) return color_a;
  long parity = 0;
  for (int a = 0; a < 3; ++a) parity += static_cast<long>(std::floor(x[a] / scale));
  return (parity & 1) == 0 ? color_a : color_b;
}

void AnalyticScene::validate() const {
  if (std::abs(light_direction.norm() - 1.0) > 1e-9) throw Error("scene: light direction must be unit length");
  if (ambient < 0.0 || ambient > 1.0) throw Error("scene: ambient must be in [0, 1]");
  if (albedo.kind == Albedo::Kind::Checker && albedo.scale <= 0.0) throw Error("scene: checker scale must be > 0");
}

double scene_sdf(const SceneNode& n, const Vec3& x) {
  using K = SceneNode::Kind;
  switch (n.kind) {
    case K::Sphere:
      return (x - n.center).norm() - n.radius;
    case K::Box: {
      const Vec3 q = (x - n.center).cwiseAbs() - n.half_extents;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case K::Torus: {
      const Vec3 p = x - n.center;
      const double ring = std::hypot(p.x(), p.y()) - n.major_radius;
      return std::hypot(ring, p.z()) - n.radius;
    }
    case K::Union:
    case K::Intersection: {
      if (n.children.empty()) throw Error("scene: empty union/intersection");
      double v = scene_sdf(n.children.front(), x);
      for (std::size_t i = 1; i < n.children.size(); ++i) {
        const double c = scene_sdf(n.children[i], x);
        v = n.kind == K::Union ? std::min(v, c) : std::max(v, c);
      }
      return v;
    }
    case K::SmoothUnion: {
      if (n.children.size() != 2) throw Error("scene: smooth union needs two children");
      const double a = scene_sdf(n.children[0], x);
      const double b = scene_sdf(n.children[1], x);
      const double k = n.blend;
      if (k <= 0.0) return std::min(a, b);
      const double h = std::clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0);
      return b + (a - b) * h - k * h * (1.0 - h);
    }
    case K::Transform:
      if (n.children.size() != 1) throw Error("scene: transform needs one child");
      return scene_sdf(n.children.front(), n.rotation.transpose() * (x - n.translation));
  }
  throw Error("scene: unknown node kind");
}

Vec3 scene_normal(const AnalyticScene& scene, const Vec3& x, double h) {
  const Vec3 g = central_gradient([&](const Vec3& p) { return scene_sdf(scene, p); }, x, h);
  const double n = g.norm();
  return n > 0.0 ? Vec3(g / n) : Vec3::Zero();
}

AnalyticScene scene_preset(const std::string& name) {
  AnalyticScene s;
  s.albedo.kind = Albedo::Kind::Checker;
  s.albedo.color_a = Rgb(0.85, 0.45, 0.25);
  s.albedo.color_b = Rgb(0.25, 0.45, 0.8);
  s.albedo.scale = 0.2;
  if (name == "sphere") {
    s.root = SceneNode::sphere(Vec3::Zero(), 0.5);
  } else if (name == "sphere_box") {
    s.root = SceneNode::smooth_union(SceneNode::sphere(Vec3(-0.15, 0.0, 0.05), 0.38),
                                     SceneNode::box(Vec3(0.22, 0.0, -0.1), Vec3(0.22, 0.22, 0.22)), 0.1);
  } else if (name == "cavity") {
    // Open-topped box: a floor and four walls around a hollow interior.
    const double w = 0.45, t = 0.06, h = 0.35;
    s.root = SceneNode::make_union({
        SceneNode::box(Vec3(0, 0, -h + t), Vec3(w, w, t)),
        SceneNode::box(Vec3(w - t, 0, 0), Vec3(t, w, h)),
        SceneNode::box(Vec3(-w + t, 0, 0), Vec3(t, w, h)),
        SceneNode::box(Vec3(0, w - t, 0), Vec3(w, t, h)),
        SceneNode::box(Vec3(0, -w + t, 0), Vec3(w, t, h)),
    });
  } else {
    throw Error("unknown scene preset: " + name);
  }
  return s;
}

AnalyticScene transformed(const AnalyticScene& scene, const Mat3& rotation, const Vec3& translation) {
  AnalyticScene s = scene;
  s.root = SceneNode::transform(scene.root, rotation, translation);
  s.light_direction = rotation * scene.light_direction;
  s.albedo_rotation = rotation * scene.albedo_rotation;
  s.albedo_translation = rotation * scene.albedo_translation + translation;
  return s;
}

TraceHit sphere_trace(const AnalyticScene& scene, const Ray& ray) {
  const auto range = ray_sphere_range(ray, 1.0);
  if (!range) return {};
  double t = std::max(range->first, 0.0);
  for (int step = 0; step < 256 && t <= range->second; ++step) {
    const double f = scene_sdf(scene, ray.origin + t * ray.direction);
    if (std::abs(f) < 1e-4) return {true, t};
    t += f;
  }
  return {};
}

CaptureRecord capture(const AnalyticScene& scene, const CameraView& view) {
  view.validate();
  scene.validate();
  CaptureRecord rec;
  rec.view = view;
  rec.rgb = Image(view.width, view.height, 3);
  rec.normal = Image(view.width, view.height, 3);
  rec.mask = Image(view.width, view.height, 1);
  rec.depth = Image(view.width, view.height, 1);
  parallel_for(static_cast<std::size_t>(view.height), [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < view.width; ++x) {
      const Ray ray = generate_ray(view, x + 0.5, y + 0.5);
      const TraceHit hit = sphere_trace(scene, ray);
      if (!hit.hit) {
        rec.rgb.set_vec3(x, y, scene.background);
        rec.depth.at(x, y, 0) = std::numeric_limits<float>::infinity();
        continue;
      }
      const Vec3 p = ray.origin + hit.t * ray.direction;
      const Vec3 n = scene_normal(scene, p);
      const double shade = scene.ambient + (1.0 - scene.ambient) * std::max(0.0, n.dot(scene.light_direction));
      rec.rgb.set_vec3(x, y, (scene.albedo_at(p) * shade).cwiseMin(1.0));
      rec.normal.set_vec3(x, y, n);
      rec.mask.at(x, y, 0) = 1.0f;
      rec.depth.at(x, y, 0) = static_cast<float>(hit.t);
    }
  });
  return rec;
}

// --- oracles ---------------------------------------------------------------------

std::vector<CameraView> CaptureOracle::poses() const {
  std::vector<CameraView> out;
  for (std::size_t i = 0; i < pose_count(); ++i) out.push_back(pose(i));
  return out;
}

void CaptureOracle::mark_revealed(std::size_t id) { revealed_.insert(id); }

void CaptureOracle::check_id(std::size_t id) const {
  if (id >= pose_count()) throw Error("capture oracle: unknown pose id " + std::to_string(id));
}

SimulatorOracle::SimulatorOracle(AnalyticScene scene, std::vector<CameraView> poses)
    : scene_(std::move(scene)), poses_(std::move(poses)), cache_(poses_.size()) {
  scene_.validate();
  for (const CameraView& v : poses_) v.validate();
}

CameraView SimulatorOracle::pose(std::size_t id) const {
  check_id(id);
  return poses_[id];
}

CaptureRecord SimulatorOracle::capture(std::size_t id) {
  check_id(id);
  if (!cache_[id]) cache_[id] = nbvsdf::capture(scene_, poses_[id]);
  mark_revealed(id);
  return *cache_[id];
}

namespace {

using Json = nlohmann::json;

CameraView view_from_json(const Json& j) {
  CameraView v;
  v.width = j.at("width");
  v.height = j.at("height");
  v.fx = j.at("fx");
  v.fy = j.at("fy");
  v.cx = j.at("cx");
  v.cy = j.at("cy");
  const auto m = j.at("world_to_camera").get<std::vector<double>>();
  if (m.size() != 16) throw Error("poses.json: world_to_camera needs 16 values");
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v.rotation(r, c) = m[static_cast<std::size_t>(4 * r + c)];
    v.translation[r] = m[static_cast<std::size_t>(4 * r + 3)];
  }
  v.validate();
  return v;
}

Json view_to_json(const CameraView& v) {
  const Mat4 m = v.world_to_camera();
  std::vector<double> flat;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
  return {{"width", v.width}, {"height", v.height}, {"fx", v.fx}, {"fy", v.fy},
          {"cx", v.cx},       {"cy", v.cy},         {"world_to_camera", flat}};
}

}  // namespace

DatasetOracle::DatasetOracle(std::filesystem::path dir) : dir_(std::move(dir)) {
  Json j;
  try {
    j = Json::parse(read_text(dir_ / "poses.json"));
  } catch (const Json::exception& e) {
    throw Error("dataset: bad poses.json: " + std::string(e.what()));
  }
  try {
    for (const Json& p : j.at("poses")) {
      Entry e;
      e.view = view_from_json(p);
      e.image = p.at("image");
      e.normal = p.value("normal", "");
      e.mask = p.value("mask", "");
      if (e.normal.empty()) has_normals_ = false;
      entries_.push_back(std::move(e));
    }
  } catch (const Json::exception& e) {
    throw Error("dataset: bad poses.json: " + std::string(e.what()));
  }
  if (entries_.empty()) throw Error("dataset: poses.json lists no poses");
}

CameraView DatasetOracle::pose(std::size_t id) const {
  check_id(id);
  return entries_[id].view;
}

CaptureRecord DatasetOracle::capture(std::size_t id) {
  check_id(id);
  const Entry& e = entries_[id];
  CaptureRecord rec;
  rec.view = e.view;
  rec.rgb = read_png(dir_ / e.image);
  if (rec.rgb.channels == 1) {
    Image rgb(rec.rgb.width, rec.rgb.height, 3);
    for (std::size_t i = 0; i < rec.rgb.pixel_count(); ++i)
      for (int c = 0; c < 3; ++c) rgb.data[3 * i + static_cast<std::size_t>(c)] = rec.rgb.data[i];
    rec.rgb = std::move(rgb);
  }
  if (rec.rgb.width != e.view.width || rec.rgb.height != e.view.height)
    throw Error("dataset: image size does not match poses.json for pose " + std::to_string(id));
  if (!e.normal.empty()) {
    rec.normal = read_pfm(dir_ / e.normal);
    if (rec.normal.channels != 3 || !rec.normal.same_shape(Image(e.view.width, e.view.height, 3)))
      throw Error("dataset: normal map shape mismatch for pose " + std::to_string(id));
  }
  if (!e.mask.empty()) {
    rec.mask = read_png(dir_ / e.mask);
    if (rec.mask.channels != 1) throw Error("dataset: mask must be single-channel");
    for (float& v : rec.mask.data) v = v > 0.5f ? 1.0f : 0.0f;
  }
  mark_revealed(id);
  return rec;
}

void write_dataset(const std::filesystem::path& dir, std::span<const CaptureRecord> records) {
  std::filesystem::create_directories(dir);
  Json poses = Json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const CaptureRecord& r = records[i];
    Json p = view_to_json(r.view);
    const std::string stem = "view_" + std::to_string(i);
    p["image"] = stem + ".png";
    write_png(dir / (stem + ".png"), r.rgb);
    if (!r.normal.data.empty()) {
      p["normal"] = stem + "_normal.pfm";
      write_pfm(dir / (stem + "_normal.pfm"), r.normal);
    }
    if (!r.mask.data.empty()) {
      p["mask"] = stem + "_mask.png";
      write_png(dir / (stem + "_mask.png"), r.mask);
    }
    poses.push_back(p);
  }
  write_text(dir / "poses.json", Json{{"poses", poses}}.dump(2));
}

}  // namespace nbvsdf
