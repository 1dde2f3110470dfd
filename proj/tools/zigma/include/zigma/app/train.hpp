#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "zigma/app/run_config.hpp"
#include "zigma/interpolant/interpolant.hpp"
#include "zigma/model/zigma.hpp"

// Output directory layout of a run:
//   config.json        the run config as parsed
//   metrics.jsonl      {"step","loss","grad_norm","ema_decay"} per logged step
//   checkpoint/        model_config.json, run_config.json, parameters
//   checkpoint_ema/    same with the EMA weights
//   state/             optimizer moments and state.json {"step", ...} for resuming
namespace zigma::app {

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Independent random stream for (seed, step, stream id).
diffkit::Rng stream_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream);

// EMA decay used after `updates` optimizer steps: the configured rate, ramped
// as (1 + n) / (10 + n) early on so short runs still average recent weights.
double ema_decay_at(double rate, std::uint64_t updates);

// Learning rate for update number `done` (1-based): linear warmup, then
// constant or cosine decay to zero at opt.steps.
double learning_rate_at(const OptimizerSettings& opt, std::size_t done);

// The network's output field for one objective, as a function of (x_t, t).
interpolant::TimeField network_field(const model::ZigmaModel& model, const std::optional<diffkit::Tensor>& cond);

// Training loss of one batch for the configured objective.
diffkit::Tensor objective_loss(const model::ZigmaModel& model, Objective objective,
                               const interpolant::InterpolantSchedule& schedule, const Batch& batch,
                               diffkit::Rng& rng);

// The velocity field (data at t = 0) that a model trained on `objective` represents.
interpolant::Field velocity_field(const model::ZigmaModel& model, Objective objective,
                                  const std::optional<diffkit::Tensor>& cond);

struct TrainOptions {
  bool resume = true;              // continue from state/ when present
  std::ostream* progress = nullptr;  // human-readable log lines
};

struct TrainSummary {
  std::size_t start_step = 0, end_step = 0;
  double first_loss = 0, last_loss = 0;
  std::size_t rejected_steps = 0;
};

TrainSummary train(const RunConfig& config, const TrainOptions& options = {});

// Objective recorded next to a checkpoint (velocity when absent).
Objective checkpoint_objective(const std::filesystem::path& ckpt_dir);

}  // namespace zigma::app
