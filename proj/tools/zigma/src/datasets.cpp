#include "zigma/app/datasets.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "json_keys.hpp"

namespace zigma::app {

using diffkit::Tensor;

std::string dataset_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::gaussian_field: return "gaussian_field";
    case DatasetKind::gaussian_mixture_grid: return "gaussian_mixture_grid";
    case DatasetKind::checkerboard_image: return "checkerboard_image";
    case DatasetKind::dirac: return "dirac";
  }
  return "?";
}

DatasetKind parse_dataset(const std::string& name) {
  for (auto k : {DatasetKind::gaussian_field, DatasetKind::gaussian_mixture_grid, DatasetKind::checkerboard_image,
                 DatasetKind::dirac}) {
    if (dataset_name(k) == name) return k;
  }
  throw model::ConfigError("unknown dataset kind '" + name + "'");
}

void validate(const SyntheticSpec& s) {
  auto fail = [](const std::string& m) { throw model::ConfigError("dataset: " + m); };
  if (s.channels == 0 || s.height == 0 || s.width == 0) fail("channels, height and width must be >= 1");
  if (!std::isfinite(s.mean) || !std::isfinite(s.amplitude) || !std::isfinite(s.noise)) fail("non-finite parameter");
  if (s.noise < 0) fail("noise must be >= 0");
  if (s.kind == DatasetKind::gaussian_field && !(s.std_min > 0 && s.std_min <= s.std_max && std::isfinite(s.std_max))) {
    fail("need 0 < std_min <= std_max");
  }
  if (s.kind == DatasetKind::gaussian_mixture_grid &&
      (s.modes == 0 || s.modes > s.height || s.modes > s.width)) {
    fail("modes must be in [1, min(height, width)]");
  }
  if (s.kind == DatasetKind::checkerboard_image && s.cell == 0) fail("cell must be >= 1");
}

nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["kind"] = dataset_name(s.kind);
  j["channels"] = s.channels;
  j["height"] = s.height;
  j["width"] = s.width;
  j["mean"] = s.mean;
  j["std_min"] = s.std_min;
  j["std_max"] = s.std_max;
  j["modes"] = s.modes;
  j["amplitude"] = s.amplitude;
  j["noise"] = s.noise;
  j["cell"] = s.cell;
  j["n_classes"] = s.n_classes;
  j["param_seed"] = s.param_seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  const std::string where = "dataset";
  detail::reject_unknown(j,
                         {"kind", "channels", "height", "width", "mean", "std_min", "std_max", "modes", "amplitude",
                          "noise", "cell", "n_classes", "param_seed"},
                         where);
  SyntheticSpec s;
  std::string kind = dataset_name(s.kind);
  detail::read(j, "kind", kind, where);
  s.kind = parse_dataset(kind);
  detail::read(j, "channels", s.channels, where);
  detail::read(j, "height", s.height, where);
  detail::read(j, "width", s.width, where);
  detail::read(j, "mean", s.mean, where);
  detail::read(j, "std_min", s.std_min, where);
  detail::read(j, "std_max", s.std_max, where);
  detail::read(j, "modes", s.modes, where);
  detail::read(j, "amplitude", s.amplitude, where);
  detail::read(j, "noise", s.noise, where);
  detail::read(j, "cell", s.cell, where);
  detail::read(j, "n_classes", s.n_classes, where);
  detail::read(j, "param_seed", s.param_seed, where);
  validate(s);
  return s;
}

PixelMoments pixel_moments(const SyntheticSpec& s) {
  const std::size_t n = s.pixels();
  PixelMoments m{std::vector<double>(n), std::vector<double>(n)};
  switch (s.kind) {
    case DatasetKind::gaussian_field:
    case DatasetKind::dirac: {
      diffkit::Rng rng(s.param_seed);
      std::uniform_real_distribution<double> mu(-s.mean, s.mean), sd(s.std_min, s.std_max);
      for (std::size_t i = 0; i < n; ++i) {
        m.mean[i] = mu(rng);
        const double d = sd(rng);
        m.var[i] = s.kind == DatasetKind::dirac ? 0.0 : d * d;
      }
      break;
    }
    case DatasetKind::gaussian_mixture_grid: {
      const double p = 1.0 / static_cast<double>(s.modes * s.modes);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = (i / s.width) % s.height, x = i % s.width;
        // Pixels outside every full block (when modes does not divide the size) stay dark.
        const bool covered = y < s.modes * (s.height / s.modes) && x < s.modes * (s.width / s.modes);
        const double q = covered ? p : 0.0;
        m.mean[i] = q * s.amplitude;
        m.var[i] = s.amplitude * s.amplitude * q * (1 - q) + s.noise * s.noise;
      }
      break;
    }
    case DatasetKind::checkerboard_image:
      for (std::size_t i = 0; i < n; ++i) {
        m.mean[i] = 0.0;
        m.var[i] = s.amplitude * s.amplitude + s.noise * s.noise;
      }
      break;
  }
  return m;
}

Batch draw_batch(const SyntheticSpec& s, std::size_t batch, diffkit::Rng& rng) {
  const std::size_t n = s.pixels();
  const std::size_t plane = s.height * s.width;
  std::vector<double> img(batch * n);
  std::vector<std::size_t> labels(batch, 0);
  std::normal_distribution<double> normal(0.0, 1.0);

  switch (s.kind) {
    case DatasetKind::gaussian_field: {
      const PixelMoments m = pixel_moments(s);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) img[b * n + i] = m.mean[i] + std::sqrt(m.var[i]) * normal(rng);
      }
      break;
    }
    case DatasetKind::dirac: {
      const PixelMoments m = pixel_moments(s);
      for (std::size_t b = 0; b < batch; ++b) std::copy(m.mean.begin(), m.mean.end(), img.begin() + b * n);
      break;
    }
    case DatasetKind::gaussian_mixture_grid: {
      const std::size_t k = s.modes * s.modes, bh = s.height / s.modes, bw = s.width / s.modes;
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t mode = pick(rng);
        labels[b] = mode;
        const std::size_t my = mode / s.modes, mx = mode % s.modes;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t y = (i % plane) / s.width, x = i % s.width;
          const bool lit = y / bh == my && x / bw == mx && y < s.modes * bh && x < s.modes * bw;
          img[b * n + i] = (lit ? s.amplitude : 0.0) + s.noise * normal(rng);
        }
      }
      break;
    }
    case DatasetKind::checkerboard_image: {
      std::bernoulli_distribution phase(0.5);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t ph = phase(rng) ? 1 : 0;
        labels[b] = ph;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t y = (i % plane) / s.width, x = i % s.width;
          const bool up = ((y / s.cell + x / s.cell + ph) % 2) == 0;
          img[b * n + i] = (up ? s.amplitude : -s.amplitude) + s.noise * normal(rng);
        }
      }
      break;
    }
  }
  if (s.n_classes > 0) {
    for (auto& l : labels) l %= s.n_classes;
  }
  return {Tensor::from({batch, s.channels, s.height, s.width}, std::move(img)), std::move(labels)};
}

}  // namespace zigma::app
