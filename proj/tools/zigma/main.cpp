// zigma: scan inspection, training, sampling, benchmarks and config tools.
// Exit codes: 0 success, 1 runtime failure, 2 usage or invalid input.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "zigma/app/batch_queue.hpp"
#include "zigma/app/run_config.hpp"
#include "zigma/app/runtime.hpp"
#include "zigma/app/sample.hpp"
#include "zigma/app/train.hpp"
#include "zigma/complexity/complexity.hpp"
#include "zigma/model/zigma.hpp"
#include "zigma/scan/schemes.hpp"

namespace {

namespace fs = std::filesystem;
namespace app = zigma::app;
namespace sc = zigma::scan;
namespace cx = zigma::complexity;
namespace ip = zigma::interpolant;
namespace zm = zigma::model;

constexpr int kOk = 0, kFailure = 1, kUsage = 2;

// Thrown for bad flag combinations detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ScanArgs {
  std::string scheme, format = "json", out, validate, pattern = "sst";
  int variant = 0;
  std::size_t width = 0, height = 0, depth = 0;
};

nlohmann::ordered_json continuity_json(const sc::ContinuityReport& r) {
  return {{"is_space_filling", r.is_space_filling}, {"max_step", r.max_step}, {"breaks", r.breaks}};
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Checks a stored order {"dims": [...], "order": [...]}; exit 1 when it is not a bijection.
int validate_order_file(const ScanArgs& a) {
  std::ifstream in(a.validate);
  if (!in) throw std::runtime_error("cannot open " + a.validate);
  const auto j = nlohmann::json::parse(in);
  const auto dims = j.at("dims").get<std::vector<std::size_t>>();
  const auto order = j.at("order").get<std::vector<std::size_t>>();
  try {
    const auto report = sc::validate(order, dims);
    nlohmann::ordered_json o;
    o["bijective"] = true;
    o["continuity"] = continuity_json(report);
    emit(o.dump() + "\n", a.out);
    return kOk;
  } catch (const sc::NotBijectiveError& e) {
    nlohmann::ordered_json o;
    o["bijective"] = false;
    o["error"] = e.what();
    emit(o.dump() + "\n", a.out);
    return kFailure;
  }
}

int cmd_scan(const ScanArgs& a) {
  if (!a.validate.empty()) return validate_order_file(a);
  if (a.scheme.empty()) throw UsageError("--scheme is required (or --validate FILE)");
  if (a.width == 0 || a.height == 0) throw UsageError("--width and --height are required");
  sc::ScanScheme s;
  s.family = sc::parse_family(a.scheme);
  s.variant = a.variant;
  s.pattern = a.pattern;
  const bool is_3d = s.family == sc::Family::Sweep3D || s.family == sc::Family::Zigzag3D ||
                     s.family == sc::Family::FactorizedST;
  if (is_3d != (a.depth > 0)) {
    throw UsageError(is_3d ? "--depth is required for " + a.scheme : "--depth only applies to 3-D schemes");
  }
  s.dims = is_3d ? std::vector<std::size_t>{a.depth, a.width, a.height} : std::vector<std::size_t>{a.width, a.height};
  sc::check_scheme(s);

  const auto generated = sc::generate_3d(s);
  nlohmann::ordered_json j;
  j["scheme"] = a.scheme;
  j["dims"] = s.dims;
  std::ostringstream text;
  if (const auto* plan = std::get_if<sc::FactorizedPlan>(&generated)) {
    j["pattern"] = plan->pattern;
    j["layers"] = nlohmann::json::array();
    for (const auto& step : plan->steps) {
      j["layers"].push_back({{"axis", std::string(1, step.axis)},
                             {"variant", step.variant},
                             {"order", std::vector<std::size_t>(step.order.order().begin(), step.order.order().end())}});
    }
    text << "scheme " << a.scheme << " pattern " << plan->pattern << " layers " << plan->steps.size() << '\n';
  } else {
    const auto& p = std::get<sc::Permutation>(generated);
    const auto report = sc::validate(p, s.dims);
    j["variant"] = a.variant;
    j["order"] = std::vector<std::size_t>(p.order().begin(), p.order().end());
    j["continuity"] = continuity_json(report);
    text << "scheme " << a.scheme << " variant " << a.variant << " breaks " << report.breaks << " max_step "
         << report.max_step << (report.is_space_filling ? " space-filling" : "") << '\n';
    if (!is_3d) text << sc::render_arrows(p, a.width, a.height);
    text << "order";
    for (auto v : p.order()) text << ' ' << v;
    text << '\n';
  }
  emit(a.format == "json" ? j.dump() + "\n" : text.str(), a.out);
  return kOk;
}

struct TrainArgs {
  std::string config, out;
  std::size_t steps = 0;
  bool fresh = false, quiet = false;
};

int cmd_train(const TrainArgs& a) {
  app::RunConfig cfg = app::load_run_config(a.config);
  if (!a.out.empty()) cfg.out_dir = a.out;
  if (a.steps > 0) cfg.optimizer.steps = a.steps;
  app::TrainOptions opts;
  opts.resume = !a.fresh;
  opts.progress = a.quiet ? nullptr : &std::cerr;
  const auto s = app::train(cfg, opts);
  std::cout << "trained steps " << s.start_step << ".." << s.end_step << " final loss " << s.last_loss << " -> "
            << cfg.out_dir << '\n';
  return kOk;
}

struct SampleArgs {
  std::string ckpt, out = "samples", sampler = "ode_euler";
  int steps = 250;
  std::size_t n = 16, batch = 64, label = 0;
  std::uint64_t seed = 0;
  double t_end = ip::kEpsClip, w_scale = 1.0;
};

int cmd_sample(const SampleArgs& a) {
  app::SampleOptions o;
  o.checkpoint = a.ckpt;
  o.out_dir = a.out;
  o.sampler.kind = ip::parse_sampler(a.sampler);
  o.sampler.steps = a.steps;
  o.sampler.t_end = a.t_end;
  o.sampler.w_scale = a.w_scale;
  o.n = a.n;
  o.batch = a.batch;
  o.seed = a.seed;
  o.label = a.label;
  const auto files = app::run_sampling(o);
  std::cout << "wrote " << a.n << " samples (" << files.size() << " files)" << (a.n ? " to " + a.out : "") << '\n';
  return kOk;
}

struct BenchArgs {
  std::string kind, grid = "256,1024", out, format;
  int reps = 3;
  std::size_t D = 64, N = 16, k = 1;
  std::uint64_t seed = 0;
};

std::vector<std::size_t> parse_grid(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw UsageError("--grid expects comma-separated positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("--grid is empty");
  return out;
}

int cmd_bench(const BenchArgs& a) {
  cx::BenchConfig cfg;
  cfg.kind = cx::parse_kind(a.kind);
  cfg.tokens = parse_grid(a.grid);
  cfg.D = a.D;
  cfg.N = a.N;
  cfg.k = a.k;
  cfg.reps = a.reps;
  cfg.seed = a.seed;
  if (cfg.kind == cx::LayerKind::zigzag && (a.k < 1 || a.k > 8)) throw UsageError("zigzag bench needs --k in [1, 8]");
  if (a.k < 1) throw UsageError("--k must be >= 1");
  cx::pin_current_thread();
  const auto rows = cx::bench(cfg);
  std::string format = a.format;
  if (format.empty()) format = fs::path(a.out).extension() == ".json" ? "json" : "csv";
  std::ostringstream text;
  if (format == "json") {
    text << cx::to_json(rows, 1).dump(2) << '\n';
  } else {
    cx::write_csv(text, rows);
  }
  emit(text.str(), a.out);
  return kOk;
}

struct ConfigArgs {
  std::string variant, file, ckpt;
  bool run = false;
};

int cmd_config_show(const ConfigArgs& a) {
  if (a.run) {
    app::RunConfig c;
    if (!a.variant.empty()) c.model = zm::preset(a.variant);
    std::cout << app::to_json(c).dump(2) << '\n';
    return kOk;
  }
  const zm::ModelConfig c = a.variant.empty() ? zm::ModelConfig{} : zm::preset(a.variant);
  nlohmann::ordered_json j = zm::to_json(c);
  j["param_count"] = zm::ZigmaModel::param_count(c);
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int cmd_config_validate(const ConfigArgs& a) {
  const app::RunConfig c = app::load_run_config(a.file);
  std::cout << "ok: " << zm::ZigmaModel::param_count(c.model) << " parameters, objective "
            << app::objective_name(c.objective) << ", dataset " << app::dataset_name(c.dataset.kind) << '\n';
  return kOk;
}

int cmd_config_inspect(const ConfigArgs& a) {
  const auto m = zm::load_checkpoint(a.ckpt);
  nlohmann::ordered_json j;
  j["model"] = zm::to_json(m->config());
  j["param_count"] = m->param_count();
  j["objective"] = app::objective_name(app::checkpoint_objective(a.ckpt));
  std::cout << j.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  app::tune_allocator();
  CLI::App cli{"zigma: zigzag-scan state-space diffusion toolkit"};
  cli.require_subcommand(1);

  ScanArgs scan;
  auto* s = cli.add_subcommand("scan", "Print a scan order and its continuity report");
  s->add_option("--scheme", scan.scheme, "sweep, zigzag, hilbert, sweep3d, zigzag3d or factorized")
      ->check(CLI::IsMember({"sweep", "zigzag", "hilbert", "sweep3d", "zigzag3d", "factorized"}));
  s->add_option("--variant", scan.variant, "Scheme variant")->check(CLI::Range(0, 7));
  s->add_option("--width", scan.width, "Grid width")->check(CLI::PositiveNumber);
  s->add_option("--height", scan.height, "Grid height")->check(CLI::PositiveNumber);
  s->add_option("--depth", scan.depth, "Frames, for 3-D schemes")->check(CLI::PositiveNumber);
  s->add_option("--pattern", scan.pattern, "Layer pattern of the factorized scheme");
  s->add_option("--format", scan.format, "json or text")->check(CLI::IsMember({"json", "text"}));
  s->add_option("--out", scan.out, "Write to a file instead of stdout");
  s->add_option("--validate", scan.validate, "Check a JSON file {dims, order} instead of generating");

  TrainArgs train;
  auto* t = cli.add_subcommand("train", "Train on a synthetic dataset");
  t->add_option("--config", train.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Override out_dir");
  t->add_option("--steps", train.steps, "Override optimizer.steps");
  t->add_flag("--fresh", train.fresh, "Ignore saved state and start over");
  t->add_flag("--quiet", train.quiet, "No progress lines");

  SampleArgs sample;
  auto* p = cli.add_subcommand("sample", "Draw samples from a checkpoint");
  p->add_option("--ckpt", sample.ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--steps", sample.steps, "Integration steps")->check(CLI::PositiveNumber);
  p->add_option("--sampler", sample.sampler, "ode_euler, ode_heun or sde_euler_maruyama")
      ->check(CLI::IsMember({"ode_euler", "ode_heun", "sde_euler_maruyama"}));
  p->add_option("--n", sample.n, "Number of samples");
  p->add_option("--seed", sample.seed, "Noise seed");
  p->add_option("--out", sample.out, "Output directory");
  p->add_option("--batch", sample.batch, "Images integrated together")->check(CLI::PositiveNumber);
  p->add_option("--label", sample.label, "Class label for conditioned models");
  p->add_option("--t-end", sample.t_end, "Final time of the integration")->check(CLI::Range(0.0, 1.0));
  p->add_option("--w-scale", sample.w_scale, "SDE diffusion scale")->check(CLI::NonNegativeNumber);

  BenchArgs bench;
  auto* b = cli.add_subcommand("bench", "Time one block forward over a grid of token counts");
  b->add_option("--kind", bench.kind, "attention, mamba, zigzag or kmamba")
      ->required()
      ->check(CLI::IsMember({"attention", "mamba", "zigzag", "kmamba"}));
  b->add_option("--grid", bench.grid, "Comma-separated token counts");
  b->add_option("--reps", bench.reps, "Repetitions per point")->check(CLI::PositiveNumber);
  b->add_option("--D", bench.D, "Channels")->check(CLI::PositiveNumber);
  b->add_option("--N", bench.N, "SSM state size")->check(CLI::PositiveNumber);
  b->add_option("--k", bench.k, "Scan directions (kmamba) or order receptive field (zigzag)");
  b->add_option("--seed", bench.seed, "Weight seed");
  b->add_option("--out", bench.out, "Output file (.csv or .json)");
  b->add_option("--format", bench.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  ConfigArgs config;
  auto* c = cli.add_subcommand("config", "Show, validate and inspect configs and checkpoints");
  c->require_subcommand(1);
  auto* cs = c->add_subcommand("show", "Print a model config (or a full run config with --run)");
  cs->add_option("--variant", config.variant, "Preset S, B, L or XL")->check(CLI::IsMember({"S", "B", "L", "XL"}));
  cs->add_flag("--run", config.run, "Print a complete default run config");
  auto* cv = c->add_subcommand("validate", "Parse and check a run config");
  cv->add_option("file", config.file, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  auto* ci = c->add_subcommand("inspect", "Describe a checkpoint");
  ci->add_option("--ckpt", config.ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_scan(scan);
    if (t->parsed()) return cmd_train(train);
    if (p->parsed()) return cmd_sample(sample);
    if (b->parsed()) return cmd_bench(bench);
    if (cs->parsed()) return cmd_config_show(config);
    if (cv->parsed()) return cmd_config_validate(config);
    if (ci->parsed()) return cmd_config_inspect(config);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const zm::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kUsage;
  } catch (const sc::SchemeError& e) {
    std::cerr << "invalid scheme: " << e.what() << '\n';
    return kUsage;
  } catch (const app::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
