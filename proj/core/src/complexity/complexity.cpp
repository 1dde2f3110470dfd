#include "zigma/complexity/complexity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>
#include <stdexcept>

#ifdef __linux__
#include <sched.h>
#endif

#include "zigma/diffkit/ops.hpp"
#include "zigma/model/attention.hpp"
#include "zigma/scan/schemes.hpp"
#include "zigma/ssm/layers.hpp"

namespace zigma::complexity {

namespace dk = zigma::diffkit;

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("FLOP count exceeds 64 bits");
  return r;
}

std::uint64_t add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("FLOP count exceeds 64 bits");
  return r;
}

void check(const ComplexitySpec& s) {
  if (s.M == 0 || s.D == 0 || s.N == 0) throw std::invalid_argument("complexity spec needs positive M, D, N");
}

bool attention_wins(std::uint64_t m, std::uint64_t d, std::uint64_t n) {
  return flops_self_attention({m, d, n}) > flops_mamba({m, d, n}, 1);
}

// Near-square (W, H) with W * H == M.
std::vector<std::size_t> grid_for(std::size_t m) {
  std::size_t w = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m))));
  while (m % w != 0) ++w;
  return {w, m / w};
}

// A block under test: a closure running one forward pass.
struct Block {
  dk::ParameterStore store;
  std::vector<ssm::MambaLayer> mambas;
  std::optional<model::MultiHeadAttention> attention;
  std::vector<scan::Permutation> orders;
};

std::unique_ptr<Block> build(const BenchConfig& cfg, std::size_t m) {
  auto b = std::make_unique<Block>();
  dk::Rng rng(cfg.seed);
  ssm::SsmConfig sc;
  sc.d_model = cfg.D;
  sc.d_state = cfg.N;
  switch (cfg.kind) {
    case LayerKind::attention:
      b->attention.emplace("attn", cfg.D, 4, b->store, rng);
      break;
    case LayerKind::mamba:
      b->mambas.emplace_back("mamba", sc, b->store, rng);
      break;
    case LayerKind::zigzag:
      // One layer whose scan is the zigzag variant selected for layer k - 1
      // of an orf-k model: the arrange/rearrange is the only difference.
      b->mambas.emplace_back("mamba", sc, b->store, rng);
      b->orders.push_back(scan::generate(scan::scheme_for_layer(cfg.k - 1, static_cast<int>(cfg.k), grid_for(m))));
      break;
    case LayerKind::kmamba:
      const auto dims = grid_for(m);
      for (std::size_t i = 0; i < cfg.k; ++i) {
        b->mambas.emplace_back("mamba" + std::to_string(i), sc, b->store, rng);
        b->orders.push_back(scan::generate(scan::scheme_for_layer(i, static_cast<int>(std::min<std::size_t>(cfg.k, 8)), dims)));
      }
      break;
  }
  return b;
}

dk::Tensor run(const Block& b, const BenchConfig& cfg, const dk::Tensor& x) {
  switch (cfg.kind) {
    case LayerKind::attention: return b.attention->forward(x, x);
    case LayerKind::mamba: return b.mambas[0].forward(x, ssm::ScanMode::sequential);
    case LayerKind::zigzag:
      return scan::apply(b.orders[0].inverse(), b.mambas[0].forward(scan::apply(b.orders[0], x), ssm::ScanMode::sequential));
    case LayerKind::kmamba: {
      dk::Tensor sum = dk::Tensor::zeros(x.shape());
      for (std::size_t i = 0; i < b.mambas.size(); ++i) {
        sum = dk::add(sum, scan::apply(b.orders[i].inverse(), b.mambas[i].forward(scan::apply(b.orders[i], x), ssm::ScanMode::sequential)));
      }
      return sum;
    }
  }
  throw std::invalid_argument("unknown layer kind");
}

}  // namespace

std::uint64_t flops_self_attention(const ComplexitySpec& s) {
  check(s);
  return add(mul(4, mul(s.M, mul(s.D, s.D))), mul(2, mul(mul(s.M, s.M), s.D)));
}

std::uint64_t flops_mamba(const ComplexitySpec& s, std::uint64_t k) {
  check(s);
  if (k == 0) throw std::invalid_argument("flops_mamba needs k >= 1");
  const std::uint64_t two_d = mul(2, s.D);
  const std::uint64_t one = add(mul(3, mul(mul(s.M, two_d), s.N)), mul(mul(s.M, two_d), mul(s.N, s.N)));
  return mul(k, one);
}

std::uint64_t crossover_tokens(std::uint64_t D, std::uint64_t N) {
  if (D == 0 || N == 0) throw std::invalid_argument("crossover_tokens needs positive D, N");
  std::uint64_t hi = 1;
  while (!attention_wins(hi, D, N)) hi *= 2;
  std::uint64_t lo = hi / 2;  // attention does not win at lo (or lo == 0)
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    (attention_wins(mid, D, N) ? hi : lo) = mid;
  }
  return hi;
}

std::string kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::attention: return "attention";
    case LayerKind::mamba: return "mamba";
    case LayerKind::zigzag: return "zigzag";
    case LayerKind::kmamba: return "kmamba";
  }
  throw std::invalid_argument("unknown layer kind");
}

LayerKind parse_kind(const std::string& name) {
  for (auto k : {LayerKind::attention, LayerKind::mamba, LayerKind::zigzag, LayerKind::kmamba}) {
    if (kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown bench kind '" + name + "' (expected attention, mamba, zigzag or kmamba)");
}

std::size_t bench_param_count(LayerKind kind, std::size_t D, std::size_t N, std::size_t k) {
  ssm::SsmConfig sc;
  sc.d_model = D;
  sc.d_state = N;
  switch (kind) {
    case LayerKind::attention: return model::MultiHeadAttention::param_count(D);
    case LayerKind::mamba:
    case LayerKind::zigzag: return ssm::MambaLayer::param_count(sc);
    case LayerKind::kmamba: return k * ssm::MambaLayer::param_count(sc);
  }
  throw std::invalid_argument("unknown layer kind");
}

std::vector<BenchRow> bench(const BenchConfig& cfg) {
  if (cfg.reps < 1) throw std::invalid_argument("bench needs reps >= 1");
  if (cfg.k < 1 || (cfg.kind == LayerKind::zigzag && cfg.k > 8)) throw std::invalid_argument("bench k out of range");
  dk::NoGradGuard no_grad;
  std::vector<BenchRow> rows;
  for (std::size_t m : cfg.tokens) {
    if (m == 0) throw std::invalid_argument("bench token counts must be positive");
    BenchRow row{kind_name(cfg.kind), m, cfg.D, cfg.N, cfg.k, std::nullopt, std::nullopt,
                 bench_param_count(cfg.kind, cfg.D, cfg.N, cfg.k)};
    try {
      const auto block = build(cfg, m);
      dk::Rng rng(cfg.seed + m);
      const dk::Tensor x = dk::Tensor::randn({1, m, cfg.D}, rng);
      run(*block, cfg, x);  // warm-up
      const std::int64_t base = dk::alloc_stats().current_bytes;
      dk::reset_alloc_peak();
      std::vector<double> ms;
      for (int r = 0; r < cfg.reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        const dk::Tensor y = run(*block, cfg, x);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
      }
      row.peak_bytes = dk::alloc_stats().peak_bytes - base;
      std::sort(ms.begin(), ms.end());
      const std::size_t n = ms.size();
      row.wall_ms_median = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
    } catch (const std::bad_alloc&) {
      // recorded as null
    }
    rows.push_back(row);
  }
  return rows;
}

double loglog_slope(const std::vector<BenchRow>& rows) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = 0;
  for (const auto& r : rows) {
    if (!r.wall_ms_median || *r.wall_ms_median <= 0) continue;
    const double x = std::log(static_cast<double>(r.tokens)), y = std::log(*r.wall_ms_median);
    sx += x, sy += y, sxx += x * x, sxy += x * y, n += 1;
  }
  if (n < 2) throw std::invalid_argument("slope fit needs at least two timed rows");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

bool pin_current_thread() {
#ifdef __linux__
  cpu_set_t allowed;
  CPU_ZERO(&allowed);
  if (sched_getaffinity(0, sizeof(allowed), &allowed) != 0) return false;
  for (int cpu = 0; cpu < CPU_SETSIZE; ++cpu) {
    if (CPU_ISSET(cpu, &allowed)) {
      cpu_set_t one;
      CPU_ZERO(&one);
      CPU_SET(cpu, &one);
      return sched_setaffinity(0, sizeof(one), &one) == 0;
    }
  }
#endif
  return false;
}

void write_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "kind,tokens,D,N,k,wall_ms_median,peak_bytes\n";
  for (const auto& r : rows) {
    out << r.kind << ',' << r.tokens << ',' << r.D << ',' << r.N << ',' << r.k << ',';
    if (r.wall_ms_median) out << *r.wall_ms_median;
    out << ',';
    if (r.peak_bytes) out << *r.peak_bytes;
    out << '\n';
  }
}

nlohmann::ordered_json to_json(const std::vector<BenchRow>& rows, int threads) {
  nlohmann::ordered_json j;
  j["threads"] = threads;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["kind"] = r.kind;
    o["tokens"] = r.tokens;
    o["D"] = r.D;
    o["N"] = r.N;
    o["k"] = r.k;
    o["wall_ms_median"] = r.wall_ms_median ? nlohmann::ordered_json(*r.wall_ms_median) : nlohmann::ordered_json();
    o["peak_bytes"] = r.peak_bytes ? nlohmann::ordered_json(*r.peak_bytes) : nlohmann::ordered_json();
    o["params"] = r.params;
    list.push_back(o);
  }
  j["rows"] = list;
  return j;
}

}  // namespace zigma::complexity
