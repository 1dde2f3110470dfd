#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace zigma::complexity {

struct ComplexitySpec {
  std::uint64_t M = 0;   // tokens
  std::uint64_t D = 0;   // channels
  std::uint64_t N = 16;  // state size
};

// Exact integer counts; std::overflow_error if a value leaves 64 bits.
std::uint64_t flops_self_attention(const ComplexitySpec& spec);            // 4 M D^2 + 2 M^2 D
std::uint64_t flops_mamba(const ComplexitySpec& spec, std::uint64_t k);    // k (3 M (2D) N + M (2D) N^2)
inline std::uint64_t flops_zigzag(const ComplexitySpec& spec) { return flops_mamba(spec, 1); }

// Smallest M with flops_self_attention > flops_mamba(k = 1), by bisection.
std::uint64_t crossover_tokens(std::uint64_t D, std::uint64_t N = 16);

enum class LayerKind { attention, mamba, zigzag, kmamba };
std::string kind_name(LayerKind kind);
LayerKind parse_kind(const std::string& name);

struct BenchConfig {
  LayerKind kind = LayerKind::mamba;
  std::vector<std::size_t> tokens;  // grid of M values
  std::size_t D = 64;
  std::size_t N = 16;
  std::size_t k = 1;    // scan directions per block (kmamba) or orf (zigzag)
  int reps = 3;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string kind;
  std::size_t tokens = 0, D = 0, N = 0, k = 0;
  std::optional<double> wall_ms_median;      // null when the point failed to allocate
  std::optional<std::int64_t> peak_bytes;
  std::size_t params = 0;
};

// One block forward at batch 1 per repetition, with grad recording off.
// Peak bytes come from the tensor allocation counter.
std::vector<BenchRow> bench(const BenchConfig& config);

// Parameter count of the benchmarked block at width D.
std::size_t bench_param_count(LayerKind kind, std::size_t D, std::size_t N, std::size_t k);

// Least-squares slope of log(wall_ms) against log(tokens) over rows with timings.
double loglog_slope(const std::vector<BenchRow>& rows);

// Pins the calling thread to one CPU when the platform allows.
bool pin_current_thread();

void write_csv(std::ostream& out, const std::vector<BenchRow>& rows);
nlohmann::ordered_json to_json(const std::vector<BenchRow>& rows, int threads);

}  // namespace zigma::complexity
