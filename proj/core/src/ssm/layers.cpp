#include "zigma/ssm/layers.hpp"

#include <algorithm>
#include <cmath>

#include "zigma/diffkit/ops.hpp"

namespace zigma::ssm {

using diffkit::Tensor;
namespace dk = zigma::diffkit;

namespace {

Tensor uniform_param(dk::ParameterStore& store, const std::string& name, dk::Shape shape, dk::Rng& rng,
                     double bound) {
  return store.add(name, Tensor::uniform(std::move(shape), rng, -bound, bound));
}

// Fan-in scaled uniform init for a [in, out] projection.
Tensor proj_param(dk::ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, dk::Rng& rng) {
  return uniform_param(store, name, {in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
}

void swap_values(Tensor& a, Tensor& b) {
  auto da = a.data();
  auto db = b.data();
  std::swap_ranges(da.begin(), da.end(), db.begin());
}

}  // namespace

SelectiveSsm::SelectiveSsm(const std::string& prefix, std::size_t channels, std::size_t d_state, std::size_t dt_rank,
                           dk::ParameterStore& store, dk::Rng& rng, double dt_min, double dt_max)
    : channels_(channels), d_state_(d_state), dt_rank_(dt_rank) {
  if (channels == 0 || d_state == 0 || dt_rank == 0) throw std::invalid_argument("SelectiveSsm: sizes must be >= 1");
  x_proj = proj_param(store, prefix + ".x_proj", channels, dt_rank + 2 * d_state, rng);
  dt_proj = uniform_param(store, prefix + ".dt_proj", {dt_rank, channels}, rng,
                          1.0 / std::sqrt(static_cast<double>(dt_rank)));

  // Bias = softplus^-1(dt) with dt log-uniform in [dt_min, dt_max].
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> bias(channels);
  for (auto& b : bias) {
    const double dt = std::exp(unit(rng) * (std::log(dt_max) - std::log(dt_min)) + std::log(dt_min));
    b = dt + std::log(-std::expm1(-dt));
  }
  dt_bias = store.add(prefix + ".dt_bias", Tensor::from({channels}, std::move(bias)));

  std::vector<double> alog(channels * d_state);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t n = 0; n < d_state; ++n) alog[c * d_state + n] = std::log(static_cast<double>(n + 1));
  }
  A_log = store.add(prefix + ".A_log", Tensor::from({channels, d_state}, std::move(alog)));
  D = store.add(prefix + ".D", Tensor::ones({channels}));
}

Tensor SelectiveSsm::step_sizes(const Tensor& u) const {
  const Tensor proj = dk::linear(u, x_proj);
  return dk::softplus(dk::linear(dk::slice_last(proj, 0, dt_rank_), dt_proj, dt_bias));
}

Tensor SelectiveSsm::forward(const Tensor& u, ScanMode mode) const {
  if (u.rank() != 3 || u.dim(2) != channels_) {
    throw dk::ShapeError("SelectiveSsm: expected [B,L," + std::to_string(channels_) + "], got " +
                         dk::to_string(u.shape()));
  }
  const Tensor proj = dk::linear(u, x_proj);
  const Tensor delta = dk::softplus(dk::linear(dk::slice_last(proj, 0, dt_rank_), dt_proj, dt_bias));
  const Tensor b = dk::slice_last(proj, dt_rank_, d_state_);
  const Tensor c = dk::slice_last(proj, dt_rank_ + d_state_, d_state_);
  const Tensor a = dk::neg(dk::exp(A_log));
  return selective_scan(u, delta, a, b, c, D, mode);
}

std::size_t SelectiveSsm::param_count(std::size_t channels, std::size_t d_state, std::size_t dt_rank) {
  return channels * (dt_rank + 2 * d_state)  // x_proj
         + dt_rank * channels + channels     // dt_proj, dt_bias
         + channels * d_state                // A_log
         + channels;                         // D
}

MambaLayer::MambaLayer(const std::string& prefix, const SsmConfig& config, dk::ParameterStore& store, dk::Rng& rng)
    : in_proj(proj_param(store, prefix + ".in_proj", config.d_model, 2 * config.d_inner(), rng)),
      conv_weight(uniform_param(store, prefix + ".conv_weight", {config.d_inner(), config.conv_width}, rng,
                                1.0 / std::sqrt(static_cast<double>(config.conv_width)))),
      conv_bias(store.add(prefix + ".conv_bias", Tensor::zeros({config.d_inner()}))),
      out_proj(proj_param(store, prefix + ".out_proj", config.d_inner(), config.d_model, rng)),
      ssm(prefix + ".ssm", config.d_inner(), config.d_state, config.resolved_dt_rank(), store, rng, config.dt_min,
          config.dt_max),
      config_(config) {}

Tensor MambaLayer::forward(const Tensor& x, ScanMode mode) const {
  if (x.rank() != 3 || x.dim(2) != config_.d_model) {
    throw dk::ShapeError("MambaLayer: expected [B,L," + std::to_string(config_.d_model) + "], got " +
                         dk::to_string(x.shape()));
  }
  const std::size_t di = config_.d_inner();
  const Tensor xz = dk::linear(x, in_proj);
  const Tensor value = dk::silu(dk::depthwise_causal_conv1d(dk::slice_last(xz, 0, di), conv_weight, conv_bias));
  const Tensor gate = dk::silu(dk::slice_last(xz, di, di));
  const Tensor y = ssm.forward(value, mode);
  return dk::linear(dk::mul(y, gate), out_proj);
}

std::size_t MambaLayer::param_count(const SsmConfig& config) {
  const std::size_t d = config.d_model, di = config.d_inner();
  return d * 2 * di                          // in_proj
         + di * config.conv_width + di       // conv
         + SelectiveSsm::param_count(di, config.d_state, config.resolved_dt_rank())
         + di * d;                           // out_proj
}

GatedBidirectionalBlock::GatedBidirectionalBlock(const std::string& prefix, std::size_t d, std::size_t d_state,
                                                 dk::ParameterStore& store, dk::Rng& rng)
    : ln_gamma(store.add(prefix + ".ln_gamma", Tensor::ones({d}))),
      ln_beta(store.add(prefix + ".ln_beta", Tensor::zeros({d}))),
      w_v(proj_param(store, prefix + ".w_v", d, 3 * d, rng)),
      w_f(proj_param(store, prefix + ".w_f", d, d, rng)),
      w_b(proj_param(store, prefix + ".w_b", d, d, rng)),
      w_u1(proj_param(store, prefix + ".w_u1", d, d, rng)),
      w_u2(proj_param(store, prefix + ".w_u2", d, d, rng)),
      w_u(proj_param(store, prefix + ".w_u", d, 3 * d, rng)),
      w_o(proj_param(store, prefix + ".w_o", 3 * d, d, rng)),
      ssm_forward(prefix + ".ssm_f", d, d_state, std::max<std::size_t>(d / 16, 1), store, rng),
      ssm_backward(prefix + ".ssm_b", d, d_state, std::max<std::size_t>(d / 16, 1), store, rng) {}

Tensor GatedBidirectionalBlock::forward(const Tensor& x, ScanMode mode) const {
  const Tensor xn = dk::layer_norm(x, ln_gamma, ln_beta);
  const Tensor v = dk::gelu(dk::linear(xn, w_v));
  const Tensor f = dk::gelu(dk::linear(xn, w_f));
  const Tensor b = dk::gelu(dk::linear(dk::flip_seq(xn), w_b));
  const Tensor u1 = dk::linear(ssm_forward.forward(f, mode), w_u1);
  const Tensor u2 = dk::linear(ssm_backward.forward(b, mode), w_u2);
  const Tensor u = dk::gelu(dk::linear(dk::mul(u1, dk::flip_seq(u2)), w_u));
  return dk::add(dk::linear(dk::mul(u, v), w_o), x);
}

std::size_t GatedBidirectionalBlock::param_count(std::size_t d, std::size_t d_state) {
  const std::size_t rank = std::max<std::size_t>(d / 16, 1);
  return 2 * d                 // layer norm
         + 13 * d * d          // W_v, W_f, W_b, W_u1, W_u2, W_u, W_o
         + 2 * SelectiveSsm::param_count(d, d_state, rank);
}

void GatedBidirectionalBlock::swap_directions() {
  swap_values(w_f, w_b);
  swap_values(w_u1, w_u2);
  swap_values(ssm_forward.x_proj, ssm_backward.x_proj);
  swap_values(ssm_forward.dt_proj, ssm_backward.dt_proj);
  swap_values(ssm_forward.dt_bias, ssm_backward.dt_bias);
  swap_values(ssm_forward.A_log, ssm_backward.A_log);
  swap_values(ssm_forward.D, ssm_backward.D);
}

}  // namespace zigma::ssm
