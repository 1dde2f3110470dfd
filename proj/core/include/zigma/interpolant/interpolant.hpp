#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zigma/diffkit/tensor.hpp"

// Time convention: data at t = 0, noise at t = 1, x_t = alpha(t) x* + sigma(t) eps.
namespace zigma::interpolant {

inline constexpr double kEpsClip = 1e-3;

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InterpolantSchedule {
  std::string name = "linear";
  double sigma_min = 1e-5;  // used by the CFM objective only

  double alpha(double t) const { return 1.0 - t; }
  double sigma(double t) const { return t; }
  double dalpha(double) const { return -1.0; }
  double dsigma(double) const { return 1.0; }
};

InterpolantSchedule make_schedule(const std::string& name);

// Batched tensors [B, ...] with one t per batch element.
diffkit::Tensor interpolate(const InterpolantSchedule& s, const diffkit::Tensor& x_star, const diffkit::Tensor& eps,
                            std::span<const double> t);
diffkit::Tensor velocity_target(const InterpolantSchedule& s, const diffkit::Tensor& x_star,
                                const diffkit::Tensor& eps, std::span<const double> t);

// f(x_t, t) with one t per batch element.
using TimeField = std::function<diffkit::Tensor(const diffkit::Tensor&, std::span<const double>)>;

// Explicit-noise forms; the rng forms draw eps ~ N(0, I) and t per element.
diffkit::Tensor loss_velocity(const TimeField& model, const InterpolantSchedule& s, const diffkit::Tensor& x_star,
                              const diffkit::Tensor& eps, std::span<const double> t);
diffkit::Tensor loss_velocity(const TimeField& model, const InterpolantSchedule& s, const diffkit::Tensor& x_star,
                              diffkit::Rng& rng);

// mean (sigma_t s(x_t, t) + eps)^2 with t in [eps_clip, 1].
diffkit::Tensor loss_score(const TimeField& score_model, const InterpolantSchedule& s, const diffkit::Tensor& x_star,
                           const diffkit::Tensor& eps, std::span<const double> t, double eps_clip = kEpsClip);
diffkit::Tensor loss_score(const TimeField& score_model, const InterpolantSchedule& s, const diffkit::Tensor& x_star,
                           diffkit::Rng& rng, double eps_clip = kEpsClip);

// Conditional flow matching in the noise-at-0 convention: x0 noise, x1 data,
//   psi_tau = (1 - (1 - sigma_min) tau) x0 + tau x1,  target x1 - (1 - sigma_min) x0.
diffkit::Tensor cfm_path(const diffkit::Tensor& x0, const diffkit::Tensor& x1, std::span<const double> tau,
                         double sigma_min);
diffkit::Tensor cfm_target(const diffkit::Tensor& x0, const diffkit::Tensor& x1, double sigma_min);
diffkit::Tensor loss_cfm(const TimeField& cfm_model, const diffkit::Tensor& x1, const diffkit::Tensor& x0,
                         std::span<const double> tau, double sigma_min);
diffkit::Tensor loss_cfm(const TimeField& cfm_model, const diffkit::Tensor& x1, diffkit::Rng& rng, double sigma_min);

// Views a velocity field of this library's convention as a CFM field:
// u(x, tau) = -v(x, 1 - tau).
TimeField cfm_adapter(TimeField velocity_model);

// s = (alpha v - dalpha x) / (sigma (dalpha sigma - alpha dsigma)); throws for t <= min_t.
diffkit::Tensor velocity_to_score(const InterpolantSchedule& s, const diffkit::Tensor& v, const diffkit::Tensor& x,
                                  double t, double min_t = kEpsClip);
// Inverse relation; needs alpha(t) != 0, i.e. t in (0, 1).
diffkit::Tensor score_to_velocity(const InterpolantSchedule& s, const diffkit::Tensor& score,
                                  const diffkit::Tensor& x, double t);

enum class SamplerKind { ode_euler, ode_heun, sde_euler_maruyama };
std::string sampler_name(SamplerKind kind);
SamplerKind parse_sampler(const std::string& name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ode_euler;
  int steps = 250;
  double w_scale = 1.0;      // SDE diffusion w_t = w_scale * sigma(t)
  double t_end = kEpsClip;   // integration runs from t = 1 down to t_end
};

// Velocity field with a batch-shared time.
using Field = std::function<diffkit::Tensor(const diffkit::Tensor&, double)>;

struct Trajectory {
  std::vector<double> times;
  std::vector<diffkit::Tensor> states;
};

// Integrates from x1 at t = 1 to t_end. The SDE draws its increments from rng.
diffkit::Tensor sample(const Field& velocity, const InterpolantSchedule& s, const SamplerConfig& cfg,
                       const diffkit::Tensor& x1, diffkit::Rng& rng, Trajectory* trajectory = nullptr);
// Same, starting from x1 ~ N(0, I) of the given shape.
diffkit::Tensor sample(const Field& velocity, const InterpolantSchedule& s, const SamplerConfig& cfg,
                       const diffkit::Shape& shape, diffkit::Rng& rng, Trajectory* trajectory = nullptr);

// Writes state_<k> tensor dumps plus manifest.json {steps, kind, seed, times}.
void dump_trajectory(const std::filesystem::path& dir, const Trajectory& trajectory, const SamplerConfig& cfg,
                     std::uint64_t seed);

}  // namespace zigma::interpolant
