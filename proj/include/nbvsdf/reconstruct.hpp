#pragma once

// Interleaved training and view acquisition: three clustered views, then one
// new capture every `plan_interval` iterations until the budget is spent.

#include "nbvsdf/oracle.hpp"
#include "nbvsdf/planner.hpp"

namespace nbvsdf {

struct ReconstructionConfig {
  HashGridConfig grid;
  FieldInit init;
  TrainConfig train;
  PlannerConfig planner;
  Policy policy = Policy::Planning;
  std::size_t budget = 8;
  std::size_t initial_views = 3;
  long plan_interval = 1000;
  bool use_normals = true;
  std::uint64_t seed = 0;

  /// Iteration at which the k-th view after the initial set is added (k >= 1).
  long addition_iteration(std::size_t k) const { return static_cast<long>(k) * plan_interval; }
  void validate(std::size_t candidate_count) const;
};

struct ReconstructionHooks {
  /// After every optimizer step; `iteration` counts completed steps.
  std::function<void(long iteration, const LossBreakdown& loss, double psi, std::size_t views)> on_step;
  /// After the initial views and after each addition, before training resumes.
  std::function<void(const FieldParams& params, const PlannerState& state, long iteration)> on_views_changed;
};

struct ReconstructionResult {
  FieldParams params;
  PlannerState state;
  double psi = 0.0;
};

TrainView to_train_view(const CaptureRecord& record, std::size_t id, bool use_normals);

/// Candidates are the oracle's poses; exactly `budget` of them are captured.
ReconstructionResult run_reconstruction(CaptureOracle& oracle, const ReconstructionConfig& config,
                                        const ReconstructionHooks& hooks = {});

}  // namespace nbvsdf
