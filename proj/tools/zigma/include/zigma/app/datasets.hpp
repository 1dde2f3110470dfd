#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zigma/diffkit/tensor.hpp"

// Synthetic image datasets with known structure. Every kind draws [B, C, H, W]
// images plus one class label per image.
//
//   gaussian_field        independent per-pixel N(mu_i, std_i^2); mu_i uniform in
//                         [-mean, mean], std_i uniform in [std_min, std_max]
//   gaussian_mixture_grid the image is split into modes x modes blocks; a sample
//                         lights one block at `amplitude` (label = block), plus
//                         N(0, noise^2) per pixel
//   checkerboard_image    +-amplitude checkerboard with cell size `cell` and a
//                         random phase (label = phase), plus noise
//   dirac                 one fixed image, uniform in [-mean, mean]
//
// Per-pixel parameters come from `param_seed` so that the data distribution
// does not depend on the training seed.
namespace zigma::app {

enum class DatasetKind { gaussian_field, gaussian_mixture_grid, checkerboard_image, dirac };

std::string dataset_name(DatasetKind kind);
DatasetKind parse_dataset(const std::string& name);

struct SyntheticSpec {
  DatasetKind kind = DatasetKind::gaussian_field;
  std::size_t channels = 1, height = 8, width = 8;
  double mean = 1.0;
  double std_min = 0.2, std_max = 0.6;
  std::size_t modes = 2;
  double amplitude = 1.0;
  double noise = 0.1;
  std::size_t cell = 2;
  std::size_t n_classes = 0;
  std::uint64_t param_seed = 1234;

  std::size_t pixels() const { return channels * height * width; }
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

void validate(const SyntheticSpec& spec);
nlohmann::ordered_json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// Per-pixel mean and variance of gaussian_field (and of dirac with zero variance).
struct PixelMoments {
  std::vector<double> mean, var;
};
PixelMoments pixel_moments(const SyntheticSpec& spec);

struct Batch {
  diffkit::Tensor images;
  std::vector<std::size_t> labels;
};

Batch draw_batch(const SyntheticSpec& spec, std::size_t batch, diffkit::Rng& rng);

}  // namespace zigma::app
