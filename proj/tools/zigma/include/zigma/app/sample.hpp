#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zigma/app/run_config.hpp"
#include "zigma/interpolant/interpolant.hpp"
#include "zigma/model/zigma.hpp"

namespace zigma::app {

// Binary greyscale PGM (P5, maxval 255). Values are min-max normalised over
// the whole image and rounded; a constant image encodes as all zeros.
std::string encode_pgm(std::span<const double> values, std::size_t width, std::size_t height);
void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t width,
               std::size_t height);

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir = "samples";
  interpolant::SamplerConfig sampler;
  std::size_t n = 16;
  std::size_t batch = 64;  // images integrated together
  std::uint64_t seed = 0;
  std::size_t label = 0;   // class for conditioned models
};

// n images [n, C, H, W] from `model`. Image i starts from noise drawn with
// stream_rng(seed, i, .) so the starting points do not depend on `batch`.
diffkit::Tensor generate(const model::ZigmaModel& model, Objective objective, const interpolant::SamplerConfig& cfg,
                         std::size_t n, std::uint64_t seed, std::size_t batch = 64, std::size_t label = 0);

// Loads the checkpoint and writes sample_<i>.{bin,json,pgm} plus samples.json.
// n == 0 writes nothing. Returns the files written.
std::vector<std::filesystem::path> run_sampling(const SampleOptions& options);

}  // namespace zigma::app
