// Command-line front end: reconstruct, evaluate, gradcheck, render, plan-trace.

#include "nbvsdf/experiment.hpp"
#include "nbvsdf/io.hpp"

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

using namespace nbvsdf;

namespace {

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig::parse("{}") : RunConfig::load(path);
}

int cmd_reconstruct(const std::string& config_path, bool dry_run, bool quiet) {
  const RunConfig config = load_config(config_path);
  if (dry_run) {
    std::cout << config.to_json();
    return 0;
  }
  run_experiment(config, true, quiet ? nullptr : &std::cerr);
  std::cout << config.output_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path, const std::string& output) {
  const RunConfig config = load_config(config_path);
  if (!config.dataset_dir().empty())
    throw Error("evaluate: dataset scenes carry no ground-truth surface or held-out captures");
  Checkpoint ck = load_checkpoint(checkpoint);
  RunMetrics m = evaluate_field(ck.params, config);
  m.n_views = 0;
  const std::string text = m.to_json();
  if (output.empty()) std::cout << text;
  else write_text(output, text);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int probes, bool corrupt) {
  GradcheckProblem problem = downsized_gradcheck_problem(seed);
  GradcheckOptions opt;
  opt.probes = probes;
  opt.seed = seed;
  if (corrupt) {
    opt.corrupt = [](FieldGrad& g) {
      for (auto& w : g.sdf_weight) w *= 1.01;
      for (auto& w : g.color_weight) w *= 1.01;
      for (double& v : g.table) v *= 1.01;
    };
  }
  const GradcheckReport r = gradcheck(problem.params, problem.psi, problem.batch, problem.config, opt);
  for (const GradcheckGroup& g : r.groups)
    std::printf("%-14s %4d/%-4d passed  max rel error %.3e\n", g.name.c_str(), g.passed, g.probes, g.max_rel_error);
  std::printf("total          %4d/%-4d passed (need %.0f%% below %.0e): %s\n", r.passed, r.probes,
              opt.pass_fraction * 100.0, opt.tolerance, r.pass ? "PASS" : "FAIL");
  return r.pass ? 0 : 1;
}

int cmd_render(const std::string& checkpoint, const std::vector<double>& eye, const std::vector<double>& target,
               int width, int height, double fov, const std::string& output, const std::string& normal_output) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const CameraView view =
      CameraView::look_at(Vec3(eye[0], eye[1], eye[2]), Vec3(target[0], target[1], target[2]), width, height, fov);
  RenderConfig rc;
  rc.jitter = false;
  const RenderImage img = render_view(view, ck.params, ck.params.grid.levels, rc, 0);
  write_png(output, img.rgb());
  if (!normal_output.empty()) {
    Image n = img.normal();
    for (float& v : n.data) v = 0.5f * (v + 1.0f);
    write_png(normal_output, n);
  }
  return 0;
}

int cmd_plan_trace(const std::string& path, int top) {
  const nlohmann::json j = nlohmann::json::parse(read_text(path));
  std::cout << "policy: " << j.at("policy").get<std::string>() << "\ncaptured:";
  for (const auto& id : j.at("captured")) std::cout << " " << id.get<std::size_t>();
  std::cout << "\n";
  for (const auto& round : j.at("rounds")) {
    std::vector<std::pair<double, std::size_t>> scores;
    int degenerate = 0;
    for (const auto& s : round.at("scores")) {
      scores.emplace_back(s.at("score").get<double>(), s.at("candidate_id").get<std::size_t>());
      degenerate += s.at("degenerate").get<bool>() ? 1 : 0;
    }
    std::stable_sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::printf("iteration %ld: chose %zu from %zu candidates (%d degenerate)\n", round.at("iteration").get<long>(),
                round.at("chosen_id").get<std::size_t>(), scores.size(), degenerate);
    for (std::size_t i = 0; i < scores.size() && static_cast<int>(i) < top; ++i)
      std::printf("  %3zu  %12.3f\n", scores[i].second, scores[i].first);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hash-grid SDF reconstruction with warping-consistency view planning.\n"
               "Worker threads: NBVSDF_THREADS (default: all cores)."};
  app.require_subcommand(1);

  std::string config_path, checkpoint, output, normal_output, trace_path;
  bool dry_run = false, quiet = false, corrupt = false;
  std::uint64_t seed = 0;
  int probes = 200, width = 256, height = 256, top = 5;
  double fov = 40.0;
  std::vector<double> eye{0.0, -2.5, 1.0}, target{0.0, 0.0, 0.0};

  auto* rec = app.add_subcommand("reconstruct", "Run interleaved training and view planning");
  rec->add_option("-c,--config", config_path, "Run configuration JSON (defaults when omitted)")->check(CLI::ExistingFile);
  rec->add_flag("--dry-run", dry_run, "Print the resolved configuration and exit");
  rec->add_flag("-q,--quiet", quiet, "No progress output");

  auto* eval = app.add_subcommand("evaluate", "Chamfer and held-out PSNR/SSIM of a checkpoint");
  eval->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("-c,--config", config_path, "Run configuration naming the scene and evaluation views")
      ->check(CLI::ExistingFile);
  eval->add_option("-o,--output", output, "Write metrics JSON here instead of stdout");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the training gradients");
  gc->add_option("--seed", seed, "Seed for the problem and the probe draw");
  gc->add_option("--probes", probes, "Number of probed parameters");
  gc->add_flag("--corrupt", corrupt, "Perturb the analytic gradient (the check must then fail)");

  auto* render = app.add_subcommand("render", "Render a checkpoint from a look-at pose to PNG");
  render->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  render->add_option("-o,--output", output, "PNG path")->required();
  render->add_option("--eye", eye, "Camera position")->expected(3);
  render->add_option("--target", target, "Look-at point")->expected(3);
  render->add_option("--width", width)->check(CLI::PositiveNumber);
  render->add_option("--height", height)->check(CLI::PositiveNumber);
  render->add_option("--fov", fov, "Vertical field of view in degrees");
  render->add_option("--normals", normal_output, "Also write a normal map PNG");

  auto* trace = app.add_subcommand("plan-trace", "Summarize a planning trace");
  trace->add_option("trace", trace_path, "trace.json from a run")->required()->check(CLI::ExistingFile);
  trace->add_option("--top", top, "Scores listed per round");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*rec) return cmd_reconstruct(config_path, dry_run, quiet);
    if (*eval) return cmd_evaluate(checkpoint, config_path, output);
    if (*gc) return cmd_gradcheck(seed, probes, corrupt);
    if (*render) return cmd_render(checkpoint, eye, target, width, height, fov, output, normal_output);
    if (*trace) return cmd_plan_trace(trace_path, top);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
