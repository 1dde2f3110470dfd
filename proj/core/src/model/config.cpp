#include "zigma/model/config.hpp"

#include <array>
#include <set>
#include <utility>

namespace zigma::model {

namespace {

template <class E, std::size_t N>
std::string name_of(E value, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [v, n] : table) {
    if (v == value) return n;
  }
  throw ConfigError("unnamed enum value");
}

template <class E, std::size_t N>
E parse_of(const std::string& name, const std::array<std::pair<E, const char*>, N>& table, const char* what) {
  for (const auto& [v, n] : table) {
    if (name == n) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
}

constexpr std::array<std::pair<PosEmbed, const char*>, 3> kPosEmbed{
    {{PosEmbed::none, "none"}, {PosEmbed::sinusoidal, "sinusoidal"}, {PosEmbed::learnable, "learnable"}}};
constexpr std::array<std::pair<Conditioning, const char*>, 3> kConditioning{{{Conditioning::none, "none"},
                                                                              {Conditioning::cross_attention, "cross_attention"},
                                                                              {Conditioning::in_context, "in_context"}}};
constexpr std::array<std::pair<Indexing, const char*>, 2> kIndexing{
    {{Indexing::naive, "naive"}, {Indexing::double_indexed, "double"}}};

}  // namespace

std::string pos_embed_name(PosEmbed p) { return name_of(p, kPosEmbed); }
PosEmbed parse_pos_embed(const std::string& name) { return parse_of(name, kPosEmbed, "pos_embed"); }
std::string conditioning_name(Conditioning c) { return name_of(c, kConditioning); }
Conditioning parse_conditioning(const std::string& name) { return parse_of(name, kConditioning, "conditioning"); }
std::string indexing_name(Indexing i) { return name_of(i, kIndexing); }
Indexing parse_indexing(const std::string& name) { return parse_of(name, kIndexing, "indexing"); }

ModelConfig preset(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "S") {
    c.layers = 12, c.hidden = 384;
  } else if (name == "B") {
    c.layers = 12, c.hidden = 768;
  } else if (name == "L") {
    c.layers = 24, c.hidden = 1024;
  } else if (name == "XL") {
    c.layers = 28, c.hidden = 1152;
  } else {
    throw ConfigError("unknown model preset '" + name + "' (expected S, B, L or XL)");
  }
  return c;
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (c.layers == 0) fail("layers must be >= 1");
  if (c.hidden == 0 || c.hidden % 8 != 0) fail("hidden must be a positive multiple of 8");
  if (c.patch_size == 0) fail("patch_size must be >= 1");
  if (c.channels == 0 || c.height == 0 || c.width == 0) fail("image extents must be positive");
  if (c.height % c.patch_size != 0 || c.width % c.patch_size != 0) {
    fail("image " + std::to_string(c.height) + "x" + std::to_string(c.width) + " is not divisible by patch_size " +
         std::to_string(c.patch_size));
  }
  if (c.orf < 1 || c.orf > 8) fail("orf must be in [1, 8]");
  if (c.scan != scan::Family::Sweep && c.scan != scan::Family::Zigzag && c.scan != scan::Family::Hilbert) {
    fail("scan must be sweep, zigzag or hilbert");
  }
  if (c.d_state == 0 || c.expand == 0 || c.conv_width == 0) fail("SSM sizes must be >= 1");
  if (c.conditioning != Conditioning::none) {
    if (c.n_classes == 0) fail("conditioning needs n_classes >= 1");
    if (c.cond_tokens == 0) fail("cond_tokens must be >= 1");
  }
  if (c.conditioning == Conditioning::cross_attention && (c.heads == 0 || c.hidden % c.heads != 0)) {
    fail("hidden must be divisible by heads");
  }
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = c.variant;
  j["layers"] = c.layers;
  j["hidden"] = c.hidden;
  j["patch_size"] = c.patch_size;
  j["channels"] = c.channels;
  j["height"] = c.height;
  j["width"] = c.width;
  j["orf"] = c.orf;
  j["scan"] = scan::family_name(c.scan);
  j["pos_embed"] = pos_embed_name(c.pos_embed);
  j["conditioning"] = conditioning_name(c.conditioning);
  j["n_classes"] = c.n_classes;
  j["cond_tokens"] = c.cond_tokens;
  j["heads"] = c.heads;
  j["d_state"] = c.d_state;
  j["expand"] = c.expand;
  j["dt_rank"] = c.dt_rank;
  j["conv_width"] = c.conv_width;
  j["indexing"] = indexing_name(c.indexing);
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  if (j.contains("variant") && j["variant"].get<std::string>() != "custom") c = preset(j["variant"].get<std::string>());
  static const std::set<std::string> known{"variant", "layers", "hidden", "patch_size", "channels", "height",
                                           "width", "orf", "scan", "pos_embed", "conditioning", "n_classes",
                                           "cond_tokens", "heads", "d_state", "expand", "dt_rank", "conv_width",
                                           "indexing"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("layers", c.layers);
    get("hidden", c.hidden);
    get("patch_size", c.patch_size);
    get("channels", c.channels);
    get("height", c.height);
    get("width", c.width);
    get("orf", c.orf);
    get("n_classes", c.n_classes);
    get("cond_tokens", c.cond_tokens);
    get("heads", c.heads);
    get("d_state", c.d_state);
    get("expand", c.expand);
    get("dt_rank", c.dt_rank);
    get("conv_width", c.conv_width);
    if (j.contains("scan")) {
      try {
        c.scan = scan::parse_family(j["scan"].get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    if (j.contains("pos_embed")) c.pos_embed = parse_pos_embed(j["pos_embed"].get<std::string>());
    if (j.contains("conditioning")) c.conditioning = parse_conditioning(j["conditioning"].get<std::string>());
    if (j.contains("indexing")) c.indexing = parse_indexing(j["indexing"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace zigma::model
