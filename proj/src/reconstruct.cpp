#include "nbvsdf/reconstruct.hpp"

namespace nbvsdf {

void ReconstructionConfig::validate(std::size_t candidate_count) const {
  grid.validate();
  if (train.schedule.levels != grid.levels)
    throw Error("config: schedule levels (" + std::to_string(train.schedule.levels) + ") differ from grid levels (" +
                std::to_string(grid.levels) + ")");
  if (initial_views == 0) throw Error("config: need at least one initial view");
  if (budget < initial_views)
    throw Error("config: budget " + std::to_string(budget) + " is below the " + std::to_string(initial_views) +
                " initial views");
  if (candidate_count < budget)
    throw Error("config: " + std::to_string(candidate_count) + " candidates cannot cover budget " +
                std::to_string(budget));
  if (plan_interval <= 0) throw Error("config: plan_interval must be positive");
  if (train.batch_rays <= 0 || train.uniform_points < 0) throw Error("config: batch sizes must be positive");
  if (train.total_iters <= addition_iteration(budget - initial_views))
    throw Error("config: total_iters " + std::to_string(train.total_iters) + " must exceed the last addition at " +
                std::to_string(addition_iteration(budget - initial_views)));
  if (planner.resolution < 8) throw Error("config: planner resolution must be at least 8");
}

TrainView to_train_view(const CaptureRecord& record, std::size_t id, bool use_normals) {
  TrainView v;
  v.view = record.view;
  v.rgb = record.rgb;
  if (use_normals) v.normal = record.normal;
  v.mask = record.mask;
  v.id = id;
  return v;
}

ReconstructionResult run_reconstruction(CaptureOracle& oracle, const ReconstructionConfig& config,
                                        const ReconstructionHooks& hooks) {
  config.validate(oracle.pose_count());
  const bool use_normals = config.use_normals && oracle.has_normals();

  ReconstructionResult result;
  result.state = PlannerState(oracle.poses());
  PlannerState& state = result.state;
  TrainState train(FieldParams::initialize(config.grid, config.seed, config.init), config.train,
                   splitmix64(config.seed ^ 0x7472616eULL));

  std::vector<std::size_t> order;
  if (config.policy == Policy::Planning)
    order = select_initial(state.poses, config.initial_views, config.seed);
  else
    order = baseline_select(config.policy, state.poses, config.budget, config.seed);

  auto capture = [&](std::size_t id) {
    state.add(to_train_view(oracle.capture(id), id, use_normals));
  };
  for (std::size_t k = 0; k < config.initial_views; ++k) capture(order[k]);
  if (hooks.on_views_changed) hooks.on_views_changed(train.params, state, 0);

  std::size_t added = 0;
  while (train.iteration < config.train.total_iters) {
    if (state.training.size() < config.budget && train.iteration == config.addition_iteration(added + 1)) {
      ++added;
      if (config.policy == Policy::Planning) {
        const double psi = config.train.schedule.psi(train.iteration);
        capture(select_next(state, train.params, psi, config.planner, train.iteration));
      } else {
        capture(order[config.initial_views + added - 1]);
      }
      if (hooks.on_views_changed) hooks.on_views_changed(train.params, state, train.iteration);
    }
    const double psi = config.train.schedule.psi(train.iteration);
    const LossBreakdown loss = train_step(train, state.training, config.train, use_normals);
    if (hooks.on_step) hooks.on_step(train.iteration, loss, psi, state.training.size());
  }
  if (state.training.size() != config.budget) throw Error("run_reconstruction: budget not reached");

  result.psi = config.train.schedule.psi(train.iteration);
  result.params = std::move(train.params);
  return result;
}

}  // namespace nbvsdf
