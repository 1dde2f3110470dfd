#pragma once

#include <cstddef>
#include <string>

#include "zigma/diffkit/params.hpp"
#include "zigma/diffkit/tensor.hpp"
#include "zigma/ssm/scan_kernels.hpp"

namespace zigma::ssm {

struct SsmConfig {
  std::size_t d_model = 0;
  std::size_t d_state = 16;
  std::size_t expand = 2;      // d_inner = expand * d_model
  std::size_t dt_rank = 0;     // 0 selects max(d_model / 16, 1)
  std::size_t conv_width = 4;
  double dt_min = 1e-3;
  double dt_max = 1e-1;

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d_model / 16 > 0 ? d_model / 16 : 1); }
};

// Input-dependent SSM over `channels` sequences: per token it projects the
// input to (dt_low, B, C), expands dt_low to a per-channel step via softplus,
// and runs selective_scan with A = -exp(A_log).
class SelectiveSsm {
 public:
  SelectiveSsm(const std::string& prefix, std::size_t channels, std::size_t d_state, std::size_t dt_rank,
               diffkit::ParameterStore& store, diffkit::Rng& rng, double dt_min = 1e-3, double dt_max = 1e-1);

  // u [B, L, channels] -> [B, L, channels]
  diffkit::Tensor forward(const diffkit::Tensor& u, ScanMode mode = ScanMode::parallel) const;

  // Step sizes the layer would use for `u` (softplus output), [B, L, channels].
  diffkit::Tensor step_sizes(const diffkit::Tensor& u) const;

  static std::size_t param_count(std::size_t channels, std::size_t d_state, std::size_t dt_rank);

  diffkit::Tensor x_proj, dt_proj, dt_bias, A_log, D;

 private:
  std::size_t channels_, d_state_, dt_rank_;
};

// Single-direction Mamba mixer: in-projection to (value, gate), causal
// depthwise conv + SiLU on the value path, selective SSM, SiLU(gate) gating,
// out-projection. The residual connection belongs to the caller.
class MambaLayer {
 public:
  MambaLayer(const std::string& prefix, const SsmConfig& config, diffkit::ParameterStore& store, diffkit::Rng& rng);

  diffkit::Tensor forward(const diffkit::Tensor& x, ScanMode mode = ScanMode::parallel) const;

  static std::size_t param_count(const SsmConfig& config);
  const SsmConfig& config() const { return config_; }

  diffkit::Tensor in_proj, conv_weight, conv_bias, out_proj;
  SelectiveSsm ssm;

 private:
  SsmConfig config_;
};

// Gated bidirectional block:
//   X = LN(x); V = g(W_v X); F = g(W_f X); B = g(W_b flip(X))
//   U1 = W_u1 SSM_f(F); U2 = W_u2 SSM_b(B); U = g(W_u (U1 * flip(U2)))
//   out = W_o (U * V) + x          with g = GELU
// Works on [B, L, d].
class GatedBidirectionalBlock {
 public:
  GatedBidirectionalBlock(const std::string& prefix, std::size_t d, std::size_t d_state,
                          diffkit::ParameterStore& store, diffkit::Rng& rng);

  diffkit::Tensor forward(const diffkit::Tensor& x, ScanMode mode = ScanMode::parallel) const;

  static std::size_t param_count(std::size_t d, std::size_t d_state);

  // Exchanges the forward and backward branches (W_f/W_b, W_u1/W_u2 and the
  // two SSMs) by swapping parameter values.
  void swap_directions();

  diffkit::Tensor ln_gamma, ln_beta, w_v, w_f, w_b, w_u1, w_u2, w_u, w_o;
  SelectiveSsm ssm_forward, ssm_backward;
};

}  // namespace zigma::ssm
