#include "zigma/interpolant/interpolant.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "zigma/diffkit/io.hpp"
#include "zigma/diffkit/ops.hpp"

namespace zigma::interpolant {

namespace dk = zigma::diffkit;
using dk::Tensor;

namespace {

void check_pair(const Tensor& a, const Tensor& b, std::span<const double> t, const char* op) {
  if (a.shape() != b.shape()) {
    throw dk::ShapeError(std::string(op) + ": shapes " + dk::to_string(a.shape()) + " and " +
                         dk::to_string(b.shape()) + " differ");
  }
  if (a.rank() == 0 || a.dim(0) != t.size()) {
    throw dk::ShapeError(std::string(op) + ": need one t per batch element");
  }
  for (double v : t) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::out_of_range(std::string(op) + ": t outside [0, 1]");
  }
}

template <class F>
std::vector<double> map_t(std::span<const double> t, F f) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
  return out;
}

std::vector<double> uniform_times(std::size_t n, dk::Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> t(n);
  for (auto& v : t) v = dist(rng);
  return t;
}

Tensor checked(Tensor loss) {
  if (!std::isfinite(loss.item())) throw NonFiniteError("loss is not finite");
  return loss;
}

void require_finite(const Tensor& x, int step, double t) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError("sampler state became non-finite at step " + std::to_string(step) + " (t=" +
                           std::to_string(t) + ")");
    }
  }
}

}  // namespace

InterpolantSchedule make_schedule(const std::string& name) {
  if (name != "linear") throw std::invalid_argument("unknown interpolant schedule '" + name + "'");
  return {};
}

Tensor interpolate(const InterpolantSchedule& s, const Tensor& x_star, const Tensor& eps, std::span<const double> t) {
  check_pair(x_star, eps, t, "interpolate");
  const auto a = map_t(t, [&](double v) { return s.alpha(v); });
  const auto g = map_t(t, [&](double v) { return s.sigma(v); });
  return dk::add(dk::scale_batch(x_star, a), dk::scale_batch(eps, g));
}

Tensor velocity_target(const InterpolantSchedule& s, const Tensor& x_star, const Tensor& eps,
                       std::span<const double> t) {
  check_pair(x_star, eps, t, "velocity_target");
  const auto da = map_t(t, [&](double v) { return s.dalpha(v); });
  const auto dg = map_t(t, [&](double v) { return s.dsigma(v); });
  return dk::add(dk::scale_batch(x_star, da), dk::scale_batch(eps, dg));
}

Tensor loss_velocity(const TimeField& model, const InterpolantSchedule& s, const Tensor& x_star, const Tensor& eps,
                     std::span<const double> t) {
  const Tensor xt = interpolate(s, x_star, eps, t);
  return checked(dk::mse(model(xt, t), velocity_target(s, x_star, eps, t)));
}

Tensor loss_velocity(const TimeField& model, const InterpolantSchedule& s, const Tensor& x_star, dk::Rng& rng) {
  const auto t = uniform_times(x_star.dim(0), rng, 0.0, 1.0);
  const Tensor eps = Tensor::randn(x_star.shape(), rng);
  return loss_velocity(model, s, x_star, eps, t);
}

Tensor loss_score(const TimeField& score_model, const InterpolantSchedule& s, const Tensor& x_star, const Tensor& eps,
                  std::span<const double> t, double eps_clip) {
  for (double v : t) {
    if (v < eps_clip) throw std::out_of_range("loss_score: t below the clamp");
  }
  const Tensor xt = interpolate(s, x_star, eps, t);
  const auto g = map_t(t, [&](double v) { return s.sigma(v); });
  return checked(dk::mean(dk::square(dk::add(dk::scale_batch(score_model(xt, t), g), eps))));
}

Tensor loss_score(const TimeField& score_model, const InterpolantSchedule& s, const Tensor& x_star, dk::Rng& rng,
                  double eps_clip) {
  const auto t = uniform_times(x_star.dim(0), rng, eps_clip, 1.0);
  const Tensor eps = Tensor::randn(x_star.shape(), rng);
  return loss_score(score_model, s, x_star, eps, t, eps_clip);
}

Tensor cfm_path(const Tensor& x0, const Tensor& x1, std::span<const double> tau, double sigma_min) {
  check_pair(x0, x1, tau, "cfm_path");
  const auto a = map_t(tau, [&](double v) { return 1.0 - (1.0 - sigma_min) * v; });
  return dk::add(dk::scale_batch(x0, a), dk::scale_batch(x1, std::vector<double>(tau.begin(), tau.end())));
}

Tensor cfm_target(const Tensor& x0, const Tensor& x1, double sigma_min) {
  return dk::sub(x1, dk::scale(x0, 1.0 - sigma_min));
}

Tensor loss_cfm(const TimeField& cfm_model, const Tensor& x1, const Tensor& x0, std::span<const double> tau,
                double sigma_min) {
  const Tensor psi = cfm_path(x0, x1, tau, sigma_min);
  return checked(dk::mse(cfm_model(psi, tau), cfm_target(x0, x1, sigma_min)));
}

Tensor loss_cfm(const TimeField& cfm_model, const Tensor& x1, dk::Rng& rng, double sigma_min) {
  const auto tau = uniform_times(x1.dim(0), rng, 0.0, 1.0);
  const Tensor x0 = Tensor::randn(x1.shape(), rng);
  return loss_cfm(cfm_model, x1, x0, tau, sigma_min);
}

TimeField cfm_adapter(TimeField velocity_model) {
  return [model = std::move(velocity_model)](const Tensor& x, std::span<const double> tau) {
    std::vector<double> t(tau.size());
    for (std::size_t i = 0; i < tau.size(); ++i) t[i] = 1.0 - tau[i];
    return dk::neg(model(x, t));
  };
}

Tensor velocity_to_score(const InterpolantSchedule& s, const Tensor& v, const Tensor& x, double t, double min_t) {
  if (!(t > min_t && t <= 1.0)) throw std::out_of_range("velocity_to_score: t must lie in (" + std::to_string(min_t) + ", 1]");
  if (v.shape() != x.shape()) throw dk::ShapeError("velocity_to_score: v and x shapes differ");
  const double a = s.alpha(t), da = s.dalpha(t), g = s.sigma(t), dg = s.dsigma(t);
  const double denom = g * (da * g - a * dg);
  return dk::add(dk::scale(v, a / denom), dk::scale(x, -da / denom));
}

Tensor score_to_velocity(const InterpolantSchedule& s, const Tensor& score, const Tensor& x, double t) {
  const double a = s.alpha(t);
  if (!(t > 0.0 && t <= 1.0) || a == 0.0) throw std::out_of_range("score_to_velocity: t must lie in (0, 1)");
  if (score.shape() != x.shape()) throw dk::ShapeError("score_to_velocity: score and x shapes differ");
  const double da = s.dalpha(t), g = s.sigma(t), dg = s.dsigma(t);
  const double denom = g * (da * g - a * dg);
  return dk::add(dk::scale(score, denom / a), dk::scale(x, da / a));
}

std::string sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::ode_euler: return "ode_euler";
    case SamplerKind::ode_heun: return "ode_heun";
    case SamplerKind::sde_euler_maruyama: return "sde_euler_maruyama";
  }
  throw std::invalid_argument("unknown sampler kind");
}

SamplerKind parse_sampler(const std::string& name) {
  for (auto k : {SamplerKind::ode_euler, SamplerKind::ode_heun, SamplerKind::sde_euler_maruyama}) {
    if (sampler_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown sampler '" + name + "' (expected ode_euler, ode_heun or sde_euler_maruyama)");
}

Tensor sample(const Field& velocity, const InterpolantSchedule& s, const SamplerConfig& cfg, const Tensor& x1,
              dk::Rng& rng, Trajectory* trajectory) {
  if (cfg.steps < 1) throw std::invalid_argument("sampler needs steps >= 1");
  if (!(cfg.t_end >= 0.0 && cfg.t_end < 1.0)) throw std::invalid_argument("sampler t_end must lie in [0, 1)");
  if (cfg.kind == SamplerKind::sde_euler_maruyama && !(cfg.w_scale > 0.0)) {
    throw std::invalid_argument("SDE sampler needs w_scale > 0");
  }
  dk::NoGradGuard no_grad;
  Tensor x = x1.detach();
  const double span = cfg.t_end - 1.0;
  auto time_at = [&](int k) { return k == cfg.steps ? cfg.t_end : 1.0 + span * k / cfg.steps; };
  if (trajectory) {
    trajectory->times = {1.0};
    trajectory->states = {x.clone()};
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int k = 0; k < cfg.steps; ++k) {
    const double t = time_at(k), t_next = time_at(k + 1), dt = t_next - t;
    const Tensor v = velocity(x, t);
    switch (cfg.kind) {
      case SamplerKind::ode_euler:
        x = dk::add(x, dk::scale(v, dt));
        break;
      case SamplerKind::ode_heun:
        if (t_next <= 0.0) {
          // The field may be singular at t = 0; finish with an Euler step.
          x = dk::add(x, dk::scale(v, dt));
        } else {
          const Tensor pred = dk::add(x, dk::scale(v, dt));
          const Tensor v2 = velocity(pred, t_next);
          x = dk::add(x, dk::scale(dk::add(v, v2), 0.5 * dt));
        }
        break;
      case SamplerKind::sde_euler_maruyama: {
        // Reverse-time step of dX = (v - w s / 2) dt + sqrt(w) dW with h = -dt > 0.
        const double h = -dt;
        const double w = cfg.w_scale * s.sigma(t);
        const Tensor score = velocity_to_score(s, v, x, t, 0.0);
        Tensor noise = Tensor::zeros(x.shape());
        for (double& z : noise.data()) z = normal(rng);
        x = dk::add(dk::add(x, dk::scale(dk::sub(dk::scale(score, 0.5 * w), v), h)),
                    dk::scale(noise, std::sqrt(w * h)));
        break;
      }
    }
    require_finite(x, k + 1, t_next);
    if (trajectory) {
      trajectory->times.push_back(t_next);
      trajectory->states.push_back(x.clone());
    }
  }
  return x;
}

Tensor sample(const Field& velocity, const InterpolantSchedule& s, const SamplerConfig& cfg, const dk::Shape& shape,
              dk::Rng& rng, Trajectory* trajectory) {
  const Tensor x1 = Tensor::randn(shape, rng);
  return sample(velocity, s, cfg, x1, rng, trajectory);
}

void dump_trajectory(const std::filesystem::path& dir, const Trajectory& trajectory, const SamplerConfig& cfg,
                     std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["steps"] = cfg.steps;
  manifest["kind"] = sampler_name(cfg.kind);
  manifest["seed"] = seed;
  manifest["times"] = trajectory.times;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t k = 0; k < trajectory.states.size(); ++k) {
    std::ostringstream name;
    name << "state_" << std::setw(5) << std::setfill('0') << k;
    dk::save_tensor(dir / name.str(), trajectory.states[k], dk::Dtype::float64);
    files.push_back(name.str());
  }
  manifest["states"] = files;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace zigma::interpolant
