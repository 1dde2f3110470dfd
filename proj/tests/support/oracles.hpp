#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "zigma/diffkit/ops.hpp"
#include "zigma/diffkit/tensor.hpp"

namespace zigma::testing {

using diffkit::Tensor;

// Norm-wise relative error ||a - n|| / max(||a||, ||n||, 1e-6) between the
// analytic gradient and central differences of L = sum(w * f(inputs)), with
// fixed random weights w. At most `probes` entries per input are checked
// (all of them when probes == 0).
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> inputs,
                         double eps = 1e-5, std::size_t probes = 0, unsigned seed = 7) {
  std::mt19937_64 rng(seed);
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tensor out = f(inputs);
  const Tensor w = Tensor::randn(out.shape(), rng);
  auto loss_of = [&](const Tensor& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y.at(i) * w.at(i);
    return s;
  };
  diffkit::backward(diffkit::sum(diffkit::mul(out, w)));

  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (probes && idx.size() > probes) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(probes);
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : idx) {
      const double keep = t.data()[i];
      double plus, minus;
      {
        diffkit::NoGradGuard guard;
        t.data()[i] = keep + eps;
        plus = loss_of(f(inputs));
        t.data()[i] = keep - eps;
        minus = loss_of(f(inputs));
      }
      t.data()[i] = keep;
      const double numeric = (plus - minus) / (2.0 * eps);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
    if (diff2 > 0) worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

// Exact velocity of the linear interpolant for independent per-element
// Gaussian data x*_i ~ N(mu_i, s_i^2):
//   v = -mu + (t - (1-t) s^2) / ((1-t)^2 s^2 + t^2) * (x - (1-t) mu)
// Batch elements share the per-element parameters.
struct GaussianField {
  std::vector<double> mu, var;

  double velocity(double x, double t, std::size_t i) const {
    const double a = 1.0 - t;
    const double v = a * a * var[i] + t * t;
    return -mu[i] + (t - a * var[i]) / v * (x - a * mu[i]);
  }

  Tensor operator()(const Tensor& x, double t) const {
    const std::size_t n = mu.size();
    std::vector<double> out(x.numel());
    const auto d = x.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = velocity(d[k], t, k % n);
    return Tensor::from(x.shape(), std::move(out));
  }
};

// Velocity toward a single point x*: (x - x*) / t.
struct DiracField {
  std::vector<double> target;
  Tensor operator()(const Tensor& x, double t) const {
    std::vector<double> out(x.numel());
    const auto d = x.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = (d[k] - target[k % target.size()]) / t;
    return Tensor::from(x.shape(), std::move(out));
  }
};

// Selective scan as written: one state vector per (batch, channel), plain
// std::exp, no shared code with the library kernels.
inline std::vector<double> reference_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& bm,
                                   const Tensor& cm, const Tensor& d) {
  const std::size_t B = u.dim(0), L = u.dim(1), C = u.dim(2), N = a.dim(1);
  std::vector<double> y(B * L * C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> h(N, 0.0);
      for (std::size_t k = 0; k < L; ++k) {
        const double dt = delta.at((b * L + k) * C + c), uk = u.at((b * L + k) * C + c);
        double out = d.at(c) * uk;
        for (std::size_t n = 0; n < N; ++n) {
          h[n] = std::exp(dt * a.at(c * N + n)) * h[n] + dt * bm.at((b * L + k) * N + n) * uk;
          out += cm.at((b * L + k) * N + n) * h[n];
        }
        y[(b * L + k) * C + c] = out;
      }
    }
  }
  return y;
}

struct Moments {
  double mean = 0.0, var = 0.0;
};

// Mean and unbiased variance of values[k * stride + offset].
inline Moments moments(const std::vector<double>& values, std::size_t stride = 1, std::size_t offset = 0) {
  Moments m;
  std::size_t n = 0;
  for (std::size_t k = offset; k < values.size(); k += stride, ++n) m.mean += values[k];
  m.mean /= static_cast<double>(n);
  for (std::size_t k = offset; k < values.size(); k += stride) m.var += (values[k] - m.mean) * (values[k] - m.mean);
  m.var /= static_cast<double>(n - 1);
  return m;
}

}  // namespace zigma::testing
