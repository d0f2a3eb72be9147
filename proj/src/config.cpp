#include "nbvsdf/config.hpp"

#include "nbvsdf/io.hpp"

#include <cmath>
#include <bit>
#include <numbers>
#include <set>

#include "json.hpp"

namespace nbvsdf {

namespace {

using Json = nlohmann::json;

constexpr double kDeg = std::numbers::pi / 180.0;

/// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: " + path_ + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const Json::exception&) {
      throw Error("config: " + where(key) + " has the wrong type");
    }
  }
  void get(const std::string& key, Vec3& out) {
    std::vector<double> v{out.x(), out.y(), out.z()};
    get(key, v);
    if (v.size() != 3) throw Error("config: " + where(key) + " must have 3 entries");
    out = Vec3(v[0], v[1], v[2]);
  }
  const Json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw Error("config: unknown key '" + where(key) + "'");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Mat3 euler_xyz(const Vec3& degrees) {
  return (Eigen::AngleAxisd(degrees.z() * kDeg, Vec3::UnitZ()) * Eigen::AngleAxisd(degrees.y() * kDeg, Vec3::UnitY()) *
          Eigen::AngleAxisd(degrees.x() * kDeg, Vec3::UnitX()))
      .toRotationMatrix();
}

SceneNode parse_node(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string type;
  r.get("type", type);
  SceneNode node;
  auto children = [&](const char* key) {
    std::vector<SceneNode> out;
    const Json* list = r.child(key);
    if (!list || !list->is_array() || list->empty()) throw Error("config: " + r.where(key) + " must be a nonempty array");
    for (std::size_t i = 0; i < list->size(); ++i)
      out.push_back(parse_node((*list)[i], r.where(key) + "[" + std::to_string(i) + "]"));
    return out;
  };
  auto positive = [&r](const char* key, double v) {
    if (!(v > 0.0)) throw Error("config: " + r.where(key) + " must be positive");
  };
  if (type == "sphere") {
    Vec3 c = Vec3::Zero();
    double radius = 0.5;
    r.get("center", c);
    r.get("radius", radius);
    positive("radius", radius);
    node = SceneNode::sphere(c, radius);
  } else if (type == "box") {
    Vec3 c = Vec3::Zero(), h(0.3, 0.3, 0.3);
    r.get("center", c);
    r.get("half_extents", h);
    positive("half_extents", h.minCoeff());
    node = SceneNode::box(c, h);
  } else if (type == "torus") {
    Vec3 c = Vec3::Zero();
    double major = 0.4, minor = 0.1;
    r.get("center", c);
    r.get("major_radius", major);
    r.get("minor_radius", minor);
    positive("major_radius", major);
    positive("minor_radius", minor);
    node = SceneNode::torus(c, major, minor);
  } else if (type == "union") {
    node = SceneNode::make_union(children("children"));
  } else if (type == "intersection") {
    node = SceneNode::make_intersection(children("children"));
  } else if (type == "smooth_union") {
    double k = 0.1;
    r.get("k", k);
    positive("k", k);
    auto kids = children("children");
    if (kids.size() != 2) throw Error("config: " + r.where("children") + " of smooth_union must have 2 entries");
    node = SceneNode::smooth_union(kids[0], kids[1], k);
  } else if (type == "transform") {
    Vec3 rot = Vec3::Zero(), t = Vec3::Zero();
    r.get("rotation_deg", rot);
    r.get("translation", t);
    auto kids = children("children");
    if (kids.size() != 1) throw Error("config: " + r.where("children") + " of transform must have 1 entry");
    node = SceneNode::transform(kids[0], euler_xyz(rot), t);
  } else {
    throw Error("config: " + r.where("type") + " '" + type + "' is not a known node type");
  }
  r.finish();
  return node;
}

AnalyticScene scene_from(const Json& j) {
  ObjectReader r(j, "scene");
  AnalyticScene scene;
  std::string preset;
  r.get("preset", preset);
  const Json* root = r.child("root");
  if (!preset.empty() == (root != nullptr)) throw Error("config: scene needs exactly one of 'preset' or 'root'");
  if (!preset.empty()) scene = scene_preset(preset);
  if (root) scene.root = parse_node(*root, "scene.root");
  if (const Json* a = r.child("albedo")) {
    ObjectReader ar(*a, "scene.albedo");
    std::string kind = scene.albedo.kind == Albedo::Kind::Checker ? "checker" : "constant";
    ar.get("kind", kind);
    if (kind == "checker") scene.albedo.kind = Albedo::Kind::Checker;
    else if (kind == "constant") scene.albedo.kind = Albedo::Kind::Constant;
    else throw Error("config: scene.albedo.kind must be 'checker' or 'constant'");
    ar.get("color_a", scene.albedo.color_a);
    ar.get("color_b", scene.albedo.color_b);
    ar.get("scale", scene.albedo.scale);
    ar.finish();
  }
  r.get("light_direction", scene.light_direction);
  if (scene.light_direction.norm() > 0.0) scene.light_direction.normalize();
  r.get("ambient", scene.ambient);
  r.get("background", scene.background);
  Vec3 rot = Vec3::Zero(), t = Vec3::Zero();
  r.get("rotation_deg", rot);
  r.get("translation", t);
  r.finish();
  if (!rot.isZero() || !t.isZero()) scene = transformed(scene, euler_xyz(rot), t);
  scene.validate();
  return scene;
}

void read_pose_set(const Json& j, const std::string& path, PoseSetSpec& spec) {
  ObjectReader r(j, path);
  r.get("width", spec.width);
  r.get("height", spec.height);
  r.get("fov_deg", spec.fov_deg);
  if (const Json* list = r.child("samplers")) {
    if (!list->is_array()) throw Error("config: " + r.where("samplers") + " must be an array");
    spec.samplers.clear();
    for (std::size_t i = 0; i < list->size(); ++i) {
      PoseSampler s;
      ObjectReader sr((*list)[i], r.where("samplers") + "[" + std::to_string(i) + "]");
      sr.get("type", s.type);
      sr.get("count", s.count);
      sr.get("elevation_deg", s.elevation_deg);
      sr.get("radius", s.radius);
      sr.finish();
      spec.samplers.push_back(s);
    }
  }
  r.finish();
}

Json pose_set_json(const PoseSetSpec& spec) {
  Json samplers = Json::array();
  for (const PoseSampler& s : spec.samplers) {
    Json e{{"type", s.type}, {"count", s.count}, {"radius", s.radius}};
    if (s.type == "ring") e["elevation_deg"] = s.elevation_deg;
    samplers.push_back(e);
  }
  return {{"width", spec.width}, {"height", spec.height}, {"fov_deg", spec.fov_deg}, {"samplers", samplers}};
}

void validate_pose_set(const PoseSetSpec& spec, const std::string& name) {
  if (spec.width < 8 || spec.height < 8) throw Error("config: " + name + " images must be at least 8x8");
  if (!(spec.fov_deg > 1.0 && spec.fov_deg < 170.0)) throw Error("config: " + name + ".fov_deg out of range");
  for (const PoseSampler& s : spec.samplers) {
    if (s.type != "ring" && s.type != "hemisphere")
      throw Error("config: " + name + " sampler type '" + s.type + "' (expected ring or hemisphere)");
    if (s.count <= 0) throw Error("config: " + name + " sampler count must be positive");
    if (!(s.radius > 1.0)) throw Error("config: " + name + " sampler radius must exceed the unit bounding sphere");
  }
}

}  // namespace

std::vector<CameraView> ring_poses(int count, double elevation_deg, double radius, int width, int height,
                                   double fov_deg) {
  std::vector<CameraView> out;
  const double el = elevation_deg * kDeg;
  for (int i = 0; i < count; ++i) {
    const double az = 2.0 * std::numbers::pi * i / count;
    const Vec3 eye = radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    out.push_back(CameraView::look_at(eye, Vec3::Zero(), width, height, fov_deg));
  }
  return out;
}

std::vector<CameraView> hemisphere_poses(int count, double radius, int width, int height, double fov_deg) {
  std::vector<CameraView> out;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = (i + 0.5) / count;
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * i;
    const Vec3 eye = radius * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    out.push_back(CameraView::look_at(eye, Vec3::Zero(), width, height, fov_deg));
  }
  return out;
}

std::vector<CameraView> PoseSetSpec::generate() const {
  std::vector<CameraView> out;
  for (const PoseSampler& s : samplers) {
    auto poses = s.type == "ring" ? ring_poses(s.count, s.elevation_deg, s.radius, width, height, fov_deg)
                                  : hemisphere_poses(s.count, s.radius, width, height, fov_deg);
    out.insert(out.end(), poses.begin(), poses.end());
  }
  return out;
}

AnalyticScene parse_scene(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw Error("config: scene is not valid JSON: " + std::string(e.what()));
  }
  return scene_from(j);
}

RunConfig RunConfig::parse(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw Error("config: invalid JSON: " + std::string(e.what()));
  }
  RunConfig c;
  ReconstructionConfig& rc = c.reconstruction;
  ObjectReader r(j, "");
  if (const Json* scene = r.child("scene")) {
    if (!scene->is_object()) throw Error("config: scene must be an object");
    c.scene_spec = scene->dump();
  }
  if (const Json* p = r.child("candidates")) read_pose_set(*p, "candidates", c.candidates);
  std::size_t budget = rc.budget;
  r.get("budget", budget);
  rc.budget = budget;
  std::string policy = policy_name(rc.policy);
  r.get("policy", policy);
  rc.policy = parse_policy(policy);
  r.get("seed", rc.seed);
  r.get("output_dir", c.output_dir);

  if (const Json* g = r.child("grid")) {
    ObjectReader gr(*g, "grid");
    int log2_table = std::countr_zero(rc.grid.table_size);
    gr.get("levels", rc.grid.levels);
    gr.get("channels", rc.grid.channels);
    gr.get("log2_table_size", log2_table);
    gr.get("base_resolution", rc.grid.base_resolution);
    gr.get("growth_factor", rc.grid.growth_factor);
    gr.finish();
    if (log2_table < 1 || log2_table > 26) throw Error("config: grid.log2_table_size must be in [1, 26]");
    rc.grid.table_size = 1u << log2_table;
  }
  if (const Json* f = r.child("field")) {
    ObjectReader fr(*f, "field");
    fr.get("sdf_hidden", rc.init.sdf_hidden);
    fr.get("color_hidden", rc.init.color_hidden);
    fr.get("tau_init", rc.init.tau);
    fr.get("init_radius", rc.init.sphere_radius);
    fr.finish();
  }
  TrainConfig& t = rc.train;
  if (const Json* tj = r.child("train")) {
    ObjectReader tr(*tj, "train");
    tr.get("batch_rays", t.batch_rays);
    tr.get("uniform_points", t.uniform_points);
    tr.get("total_iters", t.total_iters);
    tr.get("progressive", t.schedule.enabled);
    tr.get("progressive_threshold", t.schedule.threshold);
    tr.get("delta", t.delta);
    tr.get("use_normals", rc.use_normals);
    tr.get("lr_table", t.adam.lr_table);
    tr.get("lr_decoder", t.adam.lr_decoder);
    if (const Json* w = tr.child("weights")) {
      ObjectReader wr(*w, "train.weights");
      wr.get("normal", t.weights.normal);
      wr.get("eikonal", t.weights.eikonal);
      wr.get("dir_hessian", t.weights.dir_hessian);
      wr.finish();
    }
    tr.finish();
  }
  if (const Json* rj = r.child("render")) {
    ObjectReader rr(*rj, "render");
    rr.get("n_coarse", t.render.n_coarse);
    rr.get("n_importance", t.render.n_importance);
    rr.get("prune_threshold", t.render.prune_threshold);
    rr.finish();
  }
  if (const Json* s = r.child("schedule")) {
    ObjectReader sr(*s, "schedule");
    std::size_t initial = rc.initial_views;
    sr.get("initial_views", initial);
    sr.get("plan_interval", rc.plan_interval);
    sr.finish();
    rc.initial_views = initial;
  }
  if (const Json* p = r.child("planner")) {
    ObjectReader pr(*p, "planner");
    pr.get("resolution", rc.planner.resolution);
    pr.finish();
  }
  if (const Json* e = r.child("evaluation")) {
    ObjectReader er(*e, "evaluation");
    er.get("mesh_resolution", c.evaluation.mesh_resolution);
    er.get("reference_resolution", c.evaluation.reference_resolution);
    er.get("chamfer_samples", c.evaluation.chamfer_samples);
    if (const Json* h = er.child("heldout")) read_pose_set(*h, "evaluation.heldout", c.evaluation.heldout);
    er.finish();
  }
  r.finish();

  t.schedule.levels = rc.grid.levels;
  rc.planner.render = t.render;
  rc.planner.render.jitter = false;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_text(path)); }

std::string RunConfig::to_json() const {
  const ReconstructionConfig& rc = reconstruction;
  const TrainConfig& t = rc.train;
  Json j;
  j["scene"] = Json::parse(scene_spec);
  j["candidates"] = pose_set_json(candidates);
  j["budget"] = rc.budget;
  j["policy"] = policy_name(rc.policy);
  j["seed"] = rc.seed;
  j["output_dir"] = output_dir;
  j["grid"] = {{"levels", rc.grid.levels},
               {"channels", rc.grid.channels},
               {"log2_table_size", std::countr_zero(rc.grid.table_size)},
               {"base_resolution", rc.grid.base_resolution},
               {"growth_factor", rc.grid.growth_factor}};
  j["field"] = {{"sdf_hidden", rc.init.sdf_hidden},
                {"color_hidden", rc.init.color_hidden},
                {"tau_init", rc.init.tau},
                {"init_radius", rc.init.sphere_radius}};
  j["train"] = {{"batch_rays", t.batch_rays},
                {"uniform_points", t.uniform_points},
                {"total_iters", t.total_iters},
                {"progressive", t.schedule.enabled},
                {"progressive_threshold", t.schedule.threshold},
                {"delta", t.delta},
                {"use_normals", rc.use_normals},
                {"lr_table", t.adam.lr_table},
                {"lr_decoder", t.adam.lr_decoder},
                {"weights",
                 {{"normal", t.weights.normal}, {"eikonal", t.weights.eikonal}, {"dir_hessian", t.weights.dir_hessian}}}};
  j["render"] = {{"n_coarse", t.render.n_coarse},
                 {"n_importance", t.render.n_importance},
                 {"prune_threshold", t.render.prune_threshold}};
  j["schedule"] = {{"initial_views", rc.initial_views}, {"plan_interval", rc.plan_interval}};
  j["planner"] = {{"resolution", rc.planner.resolution}};
  j["evaluation"] = {{"mesh_resolution", evaluation.mesh_resolution},
                     {"reference_resolution", evaluation.reference_resolution},
                     {"chamfer_samples", evaluation.chamfer_samples},
                     {"heldout", pose_set_json(evaluation.heldout)}};
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  validate_pose_set(candidates, "candidates");
  if (!evaluation.heldout.samplers.empty()) validate_pose_set(evaluation.heldout, "evaluation.heldout");
  if (evaluation.mesh_resolution < 8 || evaluation.reference_resolution < 8)
    throw Error("config: evaluation resolutions must be at least 8");
  if (evaluation.chamfer_samples <= 0) throw Error("config: evaluation.chamfer_samples must be positive");
  const TrainConfig& t = reconstruction.train;
  if (t.render.n_coarse < 2 || t.render.n_importance < 0) throw Error("config: render sample counts out of range");
  if (!(t.delta > 0.0)) throw Error("config: train.delta must be positive");
  if (t.weights.normal < 0 || t.weights.eikonal < 0 || t.weights.dir_hessian < 0)
    throw Error("config: loss weights must be nonnegative");
  if (!(reconstruction.init.tau > 0.0)) throw Error("config: field.tau_init must be positive");
  if (dataset_dir().empty()) {
    scene();
    reconstruction.validate(candidates.generate().size());
  } else {
    reconstruction.grid.validate();
  }
}

std::filesystem::path RunConfig::dataset_dir() const {
  const Json j = Json::parse(scene_spec);
  const auto it = j.find("dataset");
  if (it == j.end()) return {};
  if (j.size() != 1 || !it->is_string()) throw Error("config: a dataset scene takes only {\"dataset\": dir}");
  return it->get<std::string>();
}

AnalyticScene RunConfig::scene() const {
  if (!dataset_dir().empty()) throw Error("config: dataset runs have no analytic scene");
  return parse_scene(scene_spec);
}

std::unique_ptr<CaptureOracle> RunConfig::make_oracle() const {
  const std::filesystem::path dir = dataset_dir();
  if (!dir.empty()) return std::make_unique<DatasetOracle>(dir);
  return std::make_unique<SimulatorOracle>(scene(), candidates.generate());
}

}  // namespace nbvsdf
