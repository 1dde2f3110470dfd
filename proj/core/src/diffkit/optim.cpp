#include "zigma/diffkit/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace zigma::diffkit {

double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_scale_for(double norm, double max_norm) {
  if (max_norm <= 0.0 || norm <= max_norm || norm == 0.0) return 1.0;
  return max_norm / norm;
}

AdamWState init_adamw_state(std::span<const Tensor> params) {
  AdamWState state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
    state.ema.emplace_back(p.data().begin(), p.data().end());
  }
  return state;
}

StepReport optimizer_step(std::span<Tensor> params, AdamWState& state, const AdamWConfig& cfg) {
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel()) {
      throw ShapeError("optimizer state for parameter " + std::to_string(i) + " has the wrong size");
    }
  }

  StepReport report;
  report.grad_norm = global_grad_norm(params);
  if (!std::isfinite(report.grad_norm)) {
    ++state.rejected;
    return report;
  }
  report.clip_scale = clip_scale_for(report.grad_norm, cfg.clip_norm);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    const auto g = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j] * report.clip_scale;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[j]);
    }
    auto& shadow = state.ema[i];
    for (std::size_t j = 0; j < w.size(); ++j) shadow[j] = cfg.ema_decay * shadow[j] + (1.0 - cfg.ema_decay) * w[j];
  }
  report.applied = true;
  return report;
}

}  // namespace zigma::diffkit
