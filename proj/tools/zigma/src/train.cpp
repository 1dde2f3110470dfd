#include "zigma/app/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "zigma/app/batch_queue.hpp"
#include "zigma/diffkit/ops.hpp"
#include "zigma/diffkit/optim.hpp"

namespace zigma::app {

namespace fs = std::filesystem;
namespace dk = zigma::diffkit;
namespace ip = zigma::interpolant;
using dk::Tensor;

namespace {

constexpr std::uint64_t kBatchStream = 1, kLossStream = 2;

std::string jsonl_row(std::size_t step, double loss, double grad_norm, double ema_decay) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = loss;
  j["grad_norm"] = grad_norm;
  j["ema_decay"] = ema_decay;
  return j.dump();
}

bool regular_log_step(std::size_t done, std::size_t log_every) { return done == 1 || done % log_every == 0; }

// Keeps the metric lines up to `last_step` so a resumed run continues a clean
// log. The final row of the interrupted run goes too unless it falls on the
// regular log grid, which makes a resumed log equal an uninterrupted one.
void truncate_metrics(const fs::path& path, std::size_t last_step, std::size_t log_every) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) continue;
    const auto step = j["step"].get<std::size_t>();
    if (step < last_step || (step == last_step && regular_log_step(step, log_every))) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::optional<Tensor> conditioning_tokens(const model::ZigmaModel& m, const Batch& batch) {
  if (m.config().conditioning == model::Conditioning::none) return std::nullopt;
  return m.condition_tokens(batch.labels);
}

dk::ParameterStore moment_store(const dk::ParameterStore& params, const std::vector<std::vector<double>>& values) {
  dk::ParameterStore out;
  const auto& e = params.entries();
  for (std::size_t i = 0; i < e.size(); ++i) out.add(e[i].name, Tensor::from(e[i].tensor.shape(), values[i]));
  return out;
}

void read_moments(const fs::path& dir, const dk::ParameterStore& params, std::vector<std::vector<double>>& values) {
  dk::ParameterStore store = moment_store(params, values);
  model::load_parameters(dir, store);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto d = store.entries()[i].tensor.data();
    values[i].assign(d.begin(), d.end());
  }
}

void save_ema_checkpoint(const fs::path& dir, const model::ZigmaModel& m, const dk::AdamWState& state) {
  model::ZigmaModel shadow(m.config());
  auto& e = shadow.params().entries();
  for (std::size_t i = 0; i < e.size(); ++i) {
    auto d = e[i].tensor.data();
    std::copy(state.ema[i].begin(), state.ema[i].end(), d.begin());
  }
  model::save_checkpoint(dir, shadow);
}

void save_all(const fs::path& out, const RunConfig& config, const model::ZigmaModel& m, const dk::AdamWState& state,
              std::size_t step) {
  model::save_checkpoint(out / "checkpoint", m);
  save_run_config(out / "checkpoint" / "run_config.json", config);
  save_ema_checkpoint(out / "checkpoint_ema", m, state);
  save_run_config(out / "checkpoint_ema" / "run_config.json", config);
  const fs::path st = out / "state";
  fs::create_directories(st);
  model::save_parameters(st / "m", moment_store(m.params(), state.first_moment));
  model::save_parameters(st / "v", moment_store(m.params(), state.second_moment));
  nlohmann::ordered_json j;
  j["step"] = step;
  j["optimizer_step"] = state.step;
  j["rejected"] = state.rejected;
  write_json(st / "state.json", j);
}

}  // namespace

diffkit::Rng stream_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(stream)};
  return diffkit::Rng(seq);
}

double ema_decay_at(double rate, std::uint64_t updates) {
  const double n = static_cast<double>(updates);
  return std::min(rate, (1.0 + n) / (10.0 + n));
}

double learning_rate_at(const OptimizerSettings& opt, std::size_t done) {
  const double n = static_cast<double>(done);
  if (opt.warmup > 0 && done < opt.warmup) return opt.lr * n / static_cast<double>(opt.warmup);
  if (opt.decay == "constant" || opt.steps <= opt.warmup) return opt.lr;
  const double span = static_cast<double>(opt.steps - opt.warmup);
  const double progress = std::min(1.0, (n - static_cast<double>(opt.warmup)) / span);
  return 0.5 * opt.lr * (1.0 + std::cos(std::acos(-1.0) * progress));
}

ip::TimeField network_field(const model::ZigmaModel& m, const std::optional<Tensor>& cond) {
  return [&m, cond](const Tensor& x, std::span<const double> t) {
    return m.forward(x, model::ConditionBundle{std::vector<double>(t.begin(), t.end()), cond});
  };
}

Tensor objective_loss(const model::ZigmaModel& m, Objective objective, const ip::InterpolantSchedule& schedule,
                      const Batch& batch, dk::Rng& rng) {
  const ip::TimeField net = network_field(m, conditioning_tokens(m, batch));
  switch (objective) {
    case Objective::velocity: return ip::loss_velocity(net, schedule, batch.images, rng);
    case Objective::score: return ip::loss_score(net, schedule, batch.images, rng);
    case Objective::cfm: return ip::loss_cfm(ip::cfm_adapter(net), batch.images, rng, schedule.sigma_min);
  }
  throw std::logic_error("objective");
}

ip::Field velocity_field(const model::ZigmaModel& m, Objective objective, const std::optional<Tensor>& cond) {
  const ip::InterpolantSchedule schedule;
  return [&m, objective, cond, schedule](const Tensor& x, double t) {
    const std::size_t b = x.dim(0);
    if (objective != Objective::score) return m.forward(x, {std::vector<double>(b, t), cond});
    // A score network says nothing about the velocity at t = 1, where alpha
    // vanishes; evaluate just inside the interval instead.
    const double tc = std::min(t, 1.0 - ip::kEpsClip);
    const Tensor s = m.forward(x, {std::vector<double>(b, tc), cond});
    return ip::score_to_velocity(schedule, s, x, tc);
  };
}

Objective checkpoint_objective(const fs::path& ckpt_dir) {
  const fs::path p = ckpt_dir / "run_config.json";
  if (!fs::exists(p)) return Objective::velocity;
  return load_run_config(p).objective;
}

TrainSummary train(const RunConfig& config, const TrainOptions& options) {
  validate(config);
  const fs::path out = config.out_dir;
  fs::create_directories(out);
  save_run_config(out / "config.json", config);

  const auto& opt = config.optimizer;
  model::ZigmaModel m(config.model, opt.seed);
  std::vector<Tensor> params = m.params().tensors();
  dk::AdamWState state = dk::init_adamw_state(params);
  const ip::InterpolantSchedule schedule = ip::make_schedule(config.schedule);

  std::size_t start = 0;
  const fs::path state_json = out / "state" / "state.json";
  if (options.resume && fs::exists(state_json)) {
    std::ifstream in(state_json);
    const auto j = nlohmann::json::parse(in);
    start = j.at("step").get<std::size_t>();
    const model::ModelConfig saved = model::load_checkpoint_config(out / "checkpoint");
    if (!(saved == config.model)) throw std::runtime_error("resume: checkpoint model config differs from the run config");
    model::load_parameters(out / "checkpoint", m.params());
    model::ZigmaModel shadow(config.model);
    model::load_parameters(out / "checkpoint_ema", shadow.params());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto d = shadow.params().entries()[i].tensor.data();
      state.ema[i].assign(d.begin(), d.end());
    }
    read_moments(out / "state" / "m", m.params(), state.first_moment);
    read_moments(out / "state" / "v", m.params(), state.second_moment);
    state.step = j.at("optimizer_step").get<std::uint64_t>();
    state.rejected = j.at("rejected").get<std::uint64_t>();
    truncate_metrics(out / "metrics.jsonl", start, config.log_every);
  } else {
    std::ofstream(out / "metrics.jsonl", std::ios::trunc);
  }

  TrainSummary summary;
  summary.start_step = start;
  summary.end_step = std::max(start, opt.steps);
  if (start >= opt.steps) {
    if (options.progress) *options.progress << "nothing to do: already at step " << start << '\n';
    return summary;
  }

  std::ofstream metrics(out / "metrics.jsonl", std::ios::app);
  const SyntheticSpec data = config.dataset;
  const std::size_t batch = opt.batch;
  BatchStream stream(
      [data, batch, seed = opt.seed](std::size_t step) {
        dk::Rng rng = stream_rng(seed, step, kBatchStream);
        return draw_batch(data, batch, rng);
      },
      start, opt.steps, config.queue_depth, worker_threads() > 1);

  dk::AdamWConfig cfg;
  cfg.weight_decay = opt.weight_decay;
  cfg.clip_norm = opt.clip;
  std::size_t bad_streak = 0, first_bad = 0;
  bool have_first = false;

  for (std::size_t step = start; step < opt.steps; ++step) {
    const Batch b = stream.next();
    dk::Rng rng = stream_rng(opt.seed, step, kLossStream);
    const std::size_t done = step + 1;

    m.params().zero_grad();
    double loss_value = std::numeric_limits<double>::quiet_NaN();
    dk::StepReport report;
    cfg.lr = learning_rate_at(opt, done);
    cfg.ema_decay = ema_decay_at(opt.ema, state.step);
    try {
      const Tensor loss = objective_loss(m, config.objective, schedule, b, rng);
      loss_value = loss.item();
      dk::backward(loss);
      report = dk::optimizer_step(params, state, cfg);
    } catch (const ip::NonFiniteError&) {
      report.applied = false;
      report.grad_norm = std::numeric_limits<double>::quiet_NaN();
    }

    if (!report.applied || !std::isfinite(loss_value)) {
      if (bad_streak++ == 0) first_bad = done;
      ++summary.rejected_steps;
      if (bad_streak >= 2) {
        std::ostringstream msg;
        msg << "non-finite loss at steps " << first_bad << " and " << done
            << "; training stopped (try a lower learning rate or a tighter gradient clip)";
        throw TrainingAborted(msg.str());
      }
    } else {
      bad_streak = 0;
    }

    if (!have_first) summary.first_loss = loss_value, have_first = true;
    summary.last_loss = loss_value;
    if (regular_log_step(done, config.log_every) || done == opt.steps) {
      metrics << jsonl_row(done, loss_value, report.grad_norm, cfg.ema_decay) << '\n';
      if (options.progress) {
        *options.progress << "step " << done << "/" << opt.steps << " loss " << loss_value << " grad_norm "
                          << report.grad_norm << '\n';
      }
    }
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != opt.steps) {
      metrics.flush();
      save_all(out, config, m, state, done);
    }
  }
  metrics.flush();
  save_all(out, config, m, state, opt.steps);
  return summary;
}

}  // namespace zigma::app
