#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "zigma/diffkit/tensor.hpp"

namespace zigma::diffkit {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 2.0;  // <= 0 disables clipping
  double ema_decay = 0.9999;
};

struct AdamWState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::vector<std::vector<double>> ema;
  std::uint64_t step = 0;
  std::uint64_t rejected = 0;
};

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

// L2 norm over all gradients; parameters without a grad buffer count as zero.
double global_grad_norm(std::span<const Tensor> params);

// Scale factor that brings `norm` down to `max_norm` (1 when already below).
double clip_scale_for(double norm, double max_norm);

// Sets up moments and EMA shadows for `params` (EMA starts at the current values).
AdamWState init_adamw_state(std::span<const Tensor> params);

// One AdamW update: non-finite gradients reject the step and bump
// state.rejected; otherwise gradients are clipped to cfg.clip_norm, moments
// updated, decoupled weight decay applied, and the EMA shadow advanced.
StepReport optimizer_step(std::span<Tensor> params, AdamWState& state, const AdamWConfig& cfg);

}  // namespace zigma::diffkit
