#include "zigma/app/run_config.hpp"

#include <cmath>
#include <fstream>

#include "json_keys.hpp"
#include "zigma/interpolant/interpolant.hpp"

namespace zigma::app {

using model::ConfigError;

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::velocity: return "velocity";
    case Objective::score: return "score";
    case Objective::cfm: return "cfm";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  for (auto o : {Objective::velocity, Objective::score, Objective::cfm}) {
    if (objective_name(o) == name) return o;
  }
  throw ConfigError("unknown objective '" + name + "' (expected velocity, score or cfm)");
}

void validate(const RunConfig& c) {
  model::validate(c.model);
  validate(c.dataset);
  try {
    interpolant::make_schedule(c.schedule);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto& m = c.model;
  const auto& d = c.dataset;
  if (m.channels != d.channels || m.height != d.height || m.width != d.width) {
    throw ConfigError("model image shape (" + std::to_string(m.channels) + "," + std::to_string(m.height) + "," +
                      std::to_string(m.width) + ") does not match the dataset (" + std::to_string(d.channels) + "," +
                      std::to_string(d.height) + "," + std::to_string(d.width) + ")");
  }
  if (m.conditioning != model::Conditioning::none && d.n_classes != m.n_classes) {
    throw ConfigError("conditioned model needs dataset.n_classes == model.n_classes");
  }
  const auto& o = c.optimizer;
  if (!(o.lr > 0) || !std::isfinite(o.lr)) throw ConfigError("optimizer.lr must be > 0");
  if (o.weight_decay < 0 || !std::isfinite(o.weight_decay)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(o.ema >= 0 && o.ema < 1)) throw ConfigError("optimizer.ema must be in [0, 1)");
  if (!std::isfinite(o.clip)) throw ConfigError("optimizer.clip must be finite");
  if (o.decay != "constant" && o.decay != "cosine") throw ConfigError("optimizer.decay must be constant or cosine");
  if (o.batch == 0) throw ConfigError("optimizer.batch must be >= 1");
  if (c.log_every == 0) throw ConfigError("log_every must be >= 1");
  if (c.queue_depth == 0) throw ConfigError("queue_depth must be >= 1");
  if (c.out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = model::to_json(c.model);
  j["schedule"] = c.schedule;
  j["objective"] = objective_name(c.objective);
  const auto& o = c.optimizer;
  j["optimizer"] = {{"lr", o.lr},         {"weight_decay", o.weight_decay}, {"clip", o.clip},
                    {"ema", o.ema},       {"warmup", o.warmup},             {"decay", o.decay},  {"batch", o.batch},
                    {"steps", o.steps},   {"seed", o.seed}};
  j["dataset"] = to_json(c.dataset);
  j["out_dir"] = c.out_dir;
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["queue_depth"] = c.queue_depth;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  const std::string where = "run config";
  detail::reject_unknown(j,
                         {"model", "schedule", "objective", "optimizer", "dataset", "out_dir", "log_every",
                          "checkpoint_every", "queue_depth"},
                         where);
  RunConfig c;
  if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
  detail::read(j, "schedule", c.schedule, where);
  std::string objective = objective_name(c.objective);
  detail::read(j, "objective", objective, where);
  c.objective = parse_objective(objective);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    const std::string ow = "optimizer";
    detail::reject_unknown(o, {"lr", "weight_decay", "clip", "ema", "warmup", "decay", "batch", "steps", "seed"}, ow);
    detail::read(o, "lr", c.optimizer.lr, ow);
    detail::read(o, "weight_decay", c.optimizer.weight_decay, ow);
    detail::read(o, "clip", c.optimizer.clip, ow);
    detail::read(o, "ema", c.optimizer.ema, ow);
    detail::read(o, "warmup", c.optimizer.warmup, ow);
    detail::read(o, "decay", c.optimizer.decay, ow);
    detail::read(o, "batch", c.optimizer.batch, ow);
    detail::read(o, "steps", c.optimizer.steps, ow);
    detail::read(o, "seed", c.optimizer.seed, ow);
  }
  if (j.contains("dataset")) c.dataset = synthetic_spec_from_json(j.at("dataset"));
  detail::read(j, "out_dir", c.out_dir, where);
  detail::read(j, "log_every", c.log_every, where);
  detail::read(j, "checkpoint_every", c.checkpoint_every, where);
  detail::read(j, "queue_depth", c.queue_depth, where);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace zigma::app
