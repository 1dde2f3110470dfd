#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "zigma/diffkit/io.hpp"
#include "zigma/diffkit/params.hpp"
#include "zigma/diffkit/tensor.hpp"
#include "zigma/model/attention.hpp"
#include "zigma/model/config.hpp"
#include "zigma/scan/permutation.hpp"
#include "zigma/ssm/layers.hpp"

namespace zigma::model {

struct ConditionBundle {
  std::vector<double> t;              // one timestep per batch element
  std::optional<diffkit::Tensor> c;   // [B, D_c, hidden] condition tokens
};

// Per-channel scale and shift from a conditioning vector:
// (1 + W_m silu(e) + b_m, W_n silu(e) + b_n), weights zero-initialised.
struct AdaLn {
  AdaLn(const std::string& prefix, std::size_t d, diffkit::ParameterStore& store);
  std::pair<diffkit::Tensor, diffkit::Tensor> operator()(const diffkit::Tensor& embedding) const;
  diffkit::Tensor weight, bias;
  std::size_t d;
};

struct ZigmaBlock {
  ZigmaBlock(const std::string& prefix, const ModelConfig& config, diffkit::ParameterStore& store,
             diffkit::Rng& rng);
  AdaLn adaln_t;
  ssm::MambaLayer mamba;
  std::optional<AdaLn> adaln_c;
  std::optional<MultiHeadAttention> cross_attn;
};

// The velocity network v(x_t, t[, c]) on [B, C, H, W] images. The SSM layers
// use the sequential evaluator, the cheaper of the two on a CPU.
class ZigmaModel {
 public:
  explicit ZigmaModel(ModelConfig config, std::uint64_t seed = 0);
  ZigmaModel(const ZigmaModel&) = delete;
  ZigmaModel& operator=(const ZigmaModel&) = delete;
  ZigmaModel(ZigmaModel&&) = default;

  diffkit::Tensor forward(const diffkit::Tensor& x_t, const ConditionBundle& bundle) const;
  diffkit::Tensor forward(const diffkit::Tensor& x_t, const ConditionBundle& bundle, Indexing indexing) const;

  // Learned condition tokens [labels.size(), cond_tokens, hidden].
  diffkit::Tensor condition_tokens(std::span<const std::size_t> labels) const;

  // Scan order of layer i over the image tokens.
  const scan::Permutation& layer_order(std::size_t layer) const { return orders_.at(layer); }
  // Order applied inside layer i to a sequence with `prefix` condition
  // tokens in front; the condition tokens stay where they are.
  scan::Permutation sequence_order(std::size_t layer, std::size_t prefix) const;
  // Gathers a forward pass performs on the token sequence.
  std::size_t gather_count(Indexing indexing) const;

  const ModelConfig& config() const { return config_; }
  diffkit::ParameterStore& params() { return store_; }
  const diffkit::ParameterStore& params() const { return store_; }
  std::size_t param_count() const { return store_.scalar_count(); }
  static std::size_t param_count(const ModelConfig& config);

 private:
  diffkit::Tensor time_embedding(std::span<const double> t) const;

  ModelConfig config_;
  diffkit::ParameterStore store_;
  std::vector<scan::Permutation> orders_;
  diffkit::Tensor patch_w_, patch_b_, pos_embed_, t_w1_, t_b1_, t_w2_, t_b2_, class_embed_, out_w_, out_b_;
  std::vector<ZigmaBlock> blocks_;
  std::optional<AdaLn> final_adaln_;
};

// Parameter dumps, one diffkit tensor per parameter named after it.
void save_parameters(const std::filesystem::path& dir, const diffkit::ParameterStore& store,
                     diffkit::Dtype dtype = diffkit::Dtype::float64);
// Overwrites values in place; missing files or shape mismatches throw.
void load_parameters(const std::filesystem::path& dir, diffkit::ParameterStore& store);

// Checkpoint = model_config.json + parameter dumps in `dir`.
void save_checkpoint(const std::filesystem::path& dir, const ZigmaModel& model);
ModelConfig load_checkpoint_config(const std::filesystem::path& dir);
std::unique_ptr<ZigmaModel> load_checkpoint(const std::filesystem::path& dir);

}  // namespace zigma::model
