#include "nbvsdf/experiment.hpp"

#include "nbvsdf/io.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "json.hpp"

namespace nbvsdf {

namespace {

using Json = nlohmann::json;

std::string round_name(std::size_t views) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "views_%02zu", views);
  return buf;
}

}  // namespace

std::string RunMetrics::to_json() const {
  Json j;
  j["chamfer"] = chamfer ? Json(*chamfer) : Json(nullptr);
  j["psnr"] = psnr ? Json(*psnr) : Json(nullptr);
  j["ssim"] = ssim ? Json(*ssim) : Json(nullptr);
  j["n_views"] = n_views;
  j["policy"] = policy;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

RunMetrics evaluate_field(const FieldParams& params, const RunConfig& config, TriangleMesh* mesh_out) {
  RunMetrics m;
  m.policy = policy_name(config.reconstruction.policy);
  m.seed = config.reconstruction.seed;
  const EvaluationSpec& ev = config.evaluation;
  TriangleMesh mesh = marching_cubes(sample_grid(params, ev.mesh_resolution));
  if (config.dataset_dir().empty()) {
    const AnalyticScene scene = config.scene();
    if (mesh.empty()) throw Error("evaluation: the extracted surface is empty");
    const TriangleMesh reference = marching_cubes(
        [&scene](const Vec3& x) { return scene_sdf(scene, x); }, params.grid.bounds, ev.reference_resolution);
    m.chamfer = chamfer(mesh, reference, static_cast<std::size_t>(ev.chamfer_samples), config.reconstruction.seed);

    const std::vector<CameraView> heldout = ev.heldout.generate();
    if (!heldout.empty()) {
      RenderConfig rc = config.reconstruction.train.render;
      rc.jitter = false;
      double psnr_sum = 0.0, ssim_sum = 0.0;
      for (const CameraView& view : heldout) {
        const Image rendered = render_view(view, params, params.grid.levels, rc, 0).rgb();
        const Image truth = capture(scene, view).rgb;
        psnr_sum += psnr(rendered, truth);
        ssim_sum += ssim(rendered, truth);
      }
      m.psnr = psnr_sum / static_cast<double>(heldout.size());
      m.ssim = ssim_sum / static_cast<double>(heldout.size());
    }
  }
  if (mesh_out) *mesh_out = std::move(mesh);
  return m;
}

std::string trace_to_json(const PlannerState& state, Policy policy) {
  Json j;
  j["policy"] = policy_name(policy);
  j["captured"] = Json::array();
  for (const TrainView& v : state.training) j["captured"].push_back(v.id);
  j["rounds"] = Json::array();
  for (const PlanningRound& r : state.trace) {
    Json scores = Json::array();
    for (const CandidateScore& s : r.scores)
      scores.push_back({{"candidate_id", s.candidate_id}, {"score", s.score}, {"degenerate", s.degenerate}});
    j["rounds"].push_back({{"iteration", r.iteration}, {"chosen_id", r.chosen_id}, {"scores", scores}});
  }
  return j.dump(2) + "\n";
}

RunOutcome run_experiment(const RunConfig& config, bool write_artifacts, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  config.validate();
  const std::filesystem::path dir = config.output_dir;
  std::unique_ptr<CaptureOracle> oracle = config.make_oracle();
  const ReconstructionConfig& rc = config.reconstruction;

  std::ofstream loss_csv;
  if (write_artifacts) {
    std::filesystem::create_directories(dir);
    write_text(dir / "config.json", config.to_json());
    loss_csv.open(dir / "loss.csv");
    if (!loss_csv) throw Error("cannot write " + (dir / "loss.csv").string());
    loss_csv << "iteration,rgb,normal,eikonal,dir_hessian,total,psi,views\n";
  }

  ReconstructionHooks hooks;
  hooks.on_step = [&](long it, const LossBreakdown& l, double psi, std::size_t views) {
    if (loss_csv.is_open()) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g,%zu\n", it, l.rgb, l.normal, l.eikonal,
                    l.dir_hessian, l.total, psi, views);
      loss_csv << buf;
    }
    if (log && (it % 100 == 0 || it == rc.train.total_iters)) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "iter %6ld  loss %.5f  rgb %.5f  psi %5.2f  views %zu  %.0fs\n", it, l.total,
                    l.rgb, psi, views, elapsed());
      *log << buf << std::flush;
    }
  };
  hooks.on_views_changed = [&](const FieldParams& params, const PlannerState& state, long it) {
    if (log) {
      *log << "iter " << it << ": captured view " << state.training.back().id << " (" << state.training.size()
           << "/" << rc.budget << ")\n"
           << std::flush;
    }
    if (!write_artifacts) return;
    const std::string name = round_name(state.training.size());
    const double psi = rc.train.schedule.psi(it);
    save_checkpoint(dir / "checkpoints" / (name + ".ckpt"), params, it, psi);
    const CameraView& v = state.training.back().view;
    const int w = rc.planner.resolution;
    const int h = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) * v.height / v.width)));
    write_png(dir / "previews" / (name + ".png"), render_view(v.scaled(w, h), params, psi, rc.planner.render, 0).rgb());
    write_text(dir / "trace.json", trace_to_json(state, rc.policy));
  };

  RunOutcome out;
  out.result = run_reconstruction(*oracle, rc, hooks);
  out.trace_json = trace_to_json(out.result.state, rc.policy);
  TriangleMesh mesh;
  out.metrics = evaluate_field(out.result.params, config, &mesh);
  out.metrics.n_views = out.result.state.training.size();
  out.seconds = elapsed();
  if (write_artifacts) {
    loss_csv.close();
    write_text(dir / "trace.json", out.trace_json);
    save_checkpoint(dir / "final.ckpt", out.result.params, rc.train.total_iters, out.result.psi);
    write_obj(dir / "mesh.obj", mesh);
    write_text(dir / "metrics.json", out.metrics.to_json());
  }
  if (log) *log << "done in " << static_cast<long>(out.seconds) << "s\n" << out.metrics.to_json() << std::flush;
  return out;
}

GradcheckProblem downsized_gradcheck_problem(std::uint64_t seed) {
  GradcheckProblem g;
  HashGridConfig grid;
  grid.levels = 4;
  grid.table_size = 1u << 10;
  g.params = FieldParams::initialize(grid, seed);
  g.psi = grid.levels;
  g.config.uniform_points = 64;
  g.config.schedule.levels = grid.levels;
  const AnalyticScene scene = scene_preset("sphere_box");
  std::vector<TrainView> views;
  for (const CameraView& v : ring_poses(3, 20.0, 2.5, 8, 8, 40.0))
    views.push_back(to_train_view(capture(scene, v), views.size(), true));
  Rng rng = Rng::stream(seed, 1);
  g.batch = draw_batch(views, 64, g.config.uniform_points, grid.bounds, g.config.render, rng);
  std::vector<Rng> jitter;
  for (std::size_t r = 0; r < g.batch.queries.size(); ++r) jitter.push_back(Rng::stream(seed, 100 + r));
  VolumeRenderer(g.params, g.psi, g.config.render).sample(g.batch.queries, jitter);
  return g;
}

}  // namespace nbvsdf
