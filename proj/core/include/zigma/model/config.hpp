#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "zigma/scan/schemes.hpp"

namespace zigma::model {

enum class PosEmbed { none, sinusoidal, learnable };
enum class Conditioning { none, cross_attention, in_context };
// naive: arrange before and rearrange after every layer.
// double_indexed: one composed gather between layers plus a final inverse.
enum class Indexing { naive, double_indexed };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::string variant = "custom";  // S, B, L, XL or custom
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t patch_size = 1;
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  int orf = 8;
  scan::Family scan = scan::Family::Zigzag;  // Sweep, Zigzag or Hilbert
  PosEmbed pos_embed = PosEmbed::learnable;
  Conditioning conditioning = Conditioning::none;
  std::size_t n_classes = 0;    // vocabulary of learned condition embeddings
  std::size_t cond_tokens = 1;  // D_c tokens per class
  std::size_t heads = 4;        // cross-attention heads
  std::size_t d_state = 16;
  std::size_t expand = 2;
  std::size_t dt_rank = 0;  // 0 = max(hidden / 16, 1)
  std::size_t conv_width = 4;
  Indexing indexing = Indexing::double_indexed;

  std::size_t grid_width() const { return width / patch_size; }
  std::size_t grid_height() const { return height / patch_size; }
  std::size_t tokens() const { return grid_width() * grid_height(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Size presets: S 12/384, B 12/768, L 24/1024, XL 28/1152 (layers/hidden).
ModelConfig preset(const std::string& name);

void validate(const ModelConfig& config);

std::string pos_embed_name(PosEmbed p);
PosEmbed parse_pos_embed(const std::string& name);
std::string conditioning_name(Conditioning c);
Conditioning parse_conditioning(const std::string& name);
std::string indexing_name(Indexing i);
Indexing parse_indexing(const std::string& name);

nlohmann::ordered_json to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys are a ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace zigma::model
