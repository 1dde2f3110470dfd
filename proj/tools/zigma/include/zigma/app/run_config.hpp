#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "zigma/app/datasets.hpp"
#include "zigma/model/config.hpp"

namespace zigma::app {

enum class Objective { velocity, score, cfm };
std::string objective_name(Objective o);
Objective parse_objective(const std::string& name);

struct OptimizerSettings {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double clip = 2.0;
  double ema = 0.9999;
  std::size_t warmup = 0;  // linear learning-rate warmup steps
  std::string decay = "constant";  // constant or cosine (to zero at `steps`)
  std::size_t batch = 16;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;

  friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

struct RunConfig {
  model::ModelConfig model;
  std::string schedule = "linear";
  Objective objective = Objective::velocity;
  OptimizerSettings optimizer;
  SyntheticSpec dataset;
  std::string out_dir = "run";
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t queue_depth = 4;       // prefetched batches

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Model and dataset must describe the same images.
void validate(const RunConfig& config);

nlohmann::ordered_json to_json(const RunConfig& config);
// Missing keys keep defaults, unknown keys are a model::ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace zigma::app
