#include "zigma/app/sample.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "zigma/app/train.hpp"
#include "zigma/diffkit/io.hpp"
#include "zigma/diffkit/ops.hpp"

namespace zigma::app {

namespace fs = std::filesystem;
namespace dk = zigma::diffkit;
using dk::Tensor;

namespace {

constexpr std::uint64_t kNoiseStream = 3, kSdeStream = 4;

std::string numbered(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu", stem, i);
  return buf;
}

}  // namespace

std::string encode_pgm(std::span<const double> values, std::size_t width, std::size_t height) {
  if (values.size() != width * height) throw std::invalid_argument("encode_pgm: size mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("encode_pgm: non-finite pixel");
    const double u = range > 0 ? (v - *lo) / range : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
  }
  return out;
}

void write_pgm(const fs::path& path, std::span<const double> values, std::size_t width, std::size_t height) {
  const std::string bytes = encode_pgm(values, width, height);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor generate(const model::ZigmaModel& m, Objective objective, const interpolant::SamplerConfig& cfg, std::size_t n,
                std::uint64_t seed, std::size_t batch, std::size_t label) {
  const auto& mc = m.config();
  const std::size_t per = mc.channels * mc.height * mc.width;
  if (batch == 0) throw std::invalid_argument("generate: batch must be >= 1");
  if (mc.conditioning != model::Conditioning::none && label >= mc.n_classes) {
    throw std::invalid_argument("generate: label " + std::to_string(label) + " out of range");
  }
  dk::NoGradGuard no_grad;
  const interpolant::InterpolantSchedule schedule;
  std::vector<double> all;
  all.reserve(n * per);
  for (std::size_t first = 0; first < n; first += batch) {
    const std::size_t count = std::min(batch, n - first);
    std::vector<double> noise(count * per);
    for (std::size_t i = 0; i < count; ++i) {
      dk::Rng rng = stream_rng(seed, first + i, kNoiseStream);
      const Tensor z = Tensor::randn({per}, rng);
      std::copy(z.data().begin(), z.data().end(), noise.begin() + i * per);
    }
    std::optional<Tensor> cond;
    if (mc.conditioning != model::Conditioning::none) {
      cond = m.condition_tokens(std::vector<std::size_t>(count, label));
    }
    const Tensor x1 = Tensor::from({count, mc.channels, mc.height, mc.width}, std::move(noise));
    dk::Rng sde = stream_rng(seed, first, kSdeStream);
    const Tensor x0 = interpolant::sample(velocity_field(m, objective, cond), schedule, cfg, x1, sde);
    all.insert(all.end(), x0.data().begin(), x0.data().end());
  }
  return Tensor::from({n, mc.channels, mc.height, mc.width}, std::move(all));
}

std::vector<fs::path> run_sampling(const SampleOptions& o) {
  const auto m = model::load_checkpoint(o.checkpoint);
  const Objective objective = checkpoint_objective(o.checkpoint);
  if (o.n == 0) return {};
  const Tensor images = generate(*m, objective, o.sampler, o.n, o.seed, o.batch, o.label);

  const auto& mc = m->config();
  const std::size_t per = mc.channels * mc.height * mc.width;
  fs::create_directories(o.out_dir);
  std::vector<fs::path> files;
  nlohmann::ordered_json manifest;
  manifest["checkpoint"] = o.checkpoint.string();
  manifest["objective"] = objective_name(objective);
  manifest["sampler"] = interpolant::sampler_name(o.sampler.kind);
  manifest["steps"] = o.sampler.steps;
  manifest["t_end"] = o.sampler.t_end;
  manifest["n"] = o.n;
  manifest["seed"] = o.seed;
  manifest["shape"] = {mc.channels, mc.height, mc.width};
  manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < o.n; ++i) {
    const std::string stem = numbered("sample", i);
    std::vector<double> px(images.data().begin() + i * per, images.data().begin() + (i + 1) * per);
    dk::save_tensor(o.out_dir / stem, Tensor::from({mc.channels, mc.height, mc.width}, px), dk::Dtype::float32);
    // Channels are stacked vertically in the greyscale image.
    write_pgm(o.out_dir / (stem + ".pgm"), px, mc.width, mc.channels * mc.height);
    files.push_back(o.out_dir / (stem + ".bin"));
    files.push_back(o.out_dir / (stem + ".json"));
    files.push_back(o.out_dir / (stem + ".pgm"));
    manifest["samples"].push_back(stem);
  }
  std::ofstream(o.out_dir / "samples.json") << manifest.dump(2) << '\n';
  files.push_back(o.out_dir / "samples.json");
  return files;
}

}  // namespace zigma::app
