#include "zigma/model/zigma.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "zigma/diffkit/ops.hpp"
#include "zigma/model/embeddings.hpp"
#include "zigma/scan/schemes.hpp"

namespace zigma::model {

namespace dk = zigma::diffkit;
using dk::Tensor;
using scan::Permutation;

namespace {

ssm::SsmConfig ssm_config(const ModelConfig& c) {
  ssm::SsmConfig s;
  s.d_model = c.hidden;
  s.d_state = c.d_state;
  s.expand = c.expand;
  s.dt_rank = c.dt_rank;
  s.conv_width = c.conv_width;
  return s;
}

Tensor norm(const Tensor& x) { return dk::layer_norm(x, std::nullopt, std::nullopt); }

// Condition tokens sit in front of the image tokens and never move.
Permutation extend(const Permutation& p, std::size_t prefix) {
  if (prefix == 0) return p;
  std::vector<scan::Index> order(prefix + p.size());
  for (std::size_t i = 0; i < prefix; ++i) order[i] = i;
  for (std::size_t k = 0; k < p.size(); ++k) order[prefix + k] = prefix + p[k];
  return Permutation(std::move(order));
}

std::vector<Permutation> layer_orders(const ModelConfig& c) {
  std::vector<Permutation> orders;
  const std::vector<std::size_t> dims{c.grid_width(), c.grid_height()};
  for (std::size_t i = 0; i < c.layers; ++i) {
    if (c.scan == scan::Family::Sweep) {
      orders.push_back(scan::sweep_2d(dims[0], dims[1]));
    } else {
      orders.push_back(scan::generate(scan::scheme_for_layer(i, c.orf, dims, c.scan)));
    }
  }
  return orders;
}

}  // namespace

AdaLn::AdaLn(const std::string& prefix, std::size_t width, dk::ParameterStore& store)
    : weight(store.add(prefix + ".weight", Tensor::zeros({width, 2 * width}))),
      bias(store.add(prefix + ".bias", Tensor::zeros({2 * width}))),
      d(width) {}

std::pair<Tensor, Tensor> AdaLn::operator()(const Tensor& embedding) const {
  const Tensor out = dk::linear(dk::silu(embedding), weight, bias);
  return {dk::add_scalar(dk::slice_last(out, 0, d), 1.0), dk::slice_last(out, d, d)};
}

ZigmaBlock::ZigmaBlock(const std::string& prefix, const ModelConfig& config, dk::ParameterStore& store, dk::Rng& rng)
    : adaln_t(prefix + ".adaln_t", config.hidden, store), mamba(prefix + ".mamba", ssm_config(config), store, rng) {
  if (config.conditioning == Conditioning::cross_attention) {
    adaln_c.emplace(prefix + ".adaln_c", config.hidden, store);
    cross_attn.emplace(prefix + ".cross_attn", config.hidden, config.heads, store, rng);
  }
}

ZigmaModel::ZigmaModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  validate(config_);
  orders_ = layer_orders(config_);
  dk::Rng rng(seed);
  const std::size_t d = config_.hidden, pd = config_.patch_dim(), m = config_.tokens();

  const double pb = 1.0 / std::sqrt(static_cast<double>(pd));
  patch_w_ = store_.add("patch_embed.weight", Tensor::uniform({pd, d}, rng, -pb, pb));
  patch_b_ = store_.add("patch_embed.bias", Tensor::zeros({d}));
  if (config_.pos_embed == PosEmbed::learnable) {
    pos_embed_ = store_.add("pos_embed", Tensor::randn({m, d}, rng, 0.02));
  } else if (config_.pos_embed == PosEmbed::sinusoidal) {
    pos_embed_ = sincos_pos_embed_2d(config_.grid_width(), config_.grid_height(), d);
  }
  t_w1_ = store_.add("t_embed.w1", Tensor::randn({d / 4, d}, rng, 0.02));
  t_b1_ = store_.add("t_embed.b1", Tensor::zeros({d}));
  t_w2_ = store_.add("t_embed.w2", Tensor::randn({d, d}, rng, 0.02));
  t_b2_ = store_.add("t_embed.b2", Tensor::zeros({d}));
  if (config_.conditioning != Conditioning::none) {
    class_embed_ = store_.add("class_embed", Tensor::randn({config_.n_classes * config_.cond_tokens, d}, rng, 0.02));
  }
  blocks_.reserve(config_.layers);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    blocks_.emplace_back("blocks." + std::to_string(i), config_, store_, rng);
  }
  final_adaln_.emplace("final.adaln", d, store_);
  out_w_ = store_.add("final.weight", Tensor::zeros({d, pd}));
  out_b_ = store_.add("final.bias", Tensor::zeros({pd}));
}

std::size_t ZigmaModel::param_count(const ModelConfig& c) {
  validate(c);
  const std::size_t d = c.hidden, pd = c.patch_dim();
  const std::size_t adaln = 2 * d * d + 2 * d;
  std::size_t n = pd * d + d;                       // patch embedding
  if (c.pos_embed == PosEmbed::learnable) n += c.tokens() * d;
  n += (d / 4) * d + d + d * d + d;                 // timestep MLP
  if (c.conditioning != Conditioning::none) n += c.n_classes * c.cond_tokens * d;
  std::size_t block = adaln + ssm::MambaLayer::param_count(ssm_config(c));
  if (c.conditioning == Conditioning::cross_attention) block += adaln + MultiHeadAttention::param_count(d);
  n += c.layers * block;
  n += adaln + d * pd + pd;                         // final layer
  return n;
}

Tensor ZigmaModel::time_embedding(std::span<const double> t) const {
  const Tensor feats = timestep_features(t, config_.hidden / 4);
  return dk::linear(dk::silu(dk::linear(feats, t_w1_, t_b1_)), t_w2_, t_b2_);
}

Tensor ZigmaModel::condition_tokens(std::span<const std::size_t> labels) const {
  if (config_.conditioning == Conditioning::none) throw ConfigError("model has no condition embeddings");
  const std::size_t dc = config_.cond_tokens;
  std::vector<std::size_t> ids;
  ids.reserve(labels.size() * dc);
  for (std::size_t label : labels) {
    if (label >= config_.n_classes) {
      throw std::out_of_range("class label " + std::to_string(label) + " >= n_classes " +
                              std::to_string(config_.n_classes));
    }
    for (std::size_t j = 0; j < dc; ++j) ids.push_back(label * dc + j);
  }
  return dk::reshape(dk::embedding(class_embed_, ids), {labels.size(), dc, config_.hidden});
}

Permutation ZigmaModel::sequence_order(std::size_t layer, std::size_t prefix) const {
  return extend(orders_.at(layer), prefix);
}

std::size_t ZigmaModel::gather_count(Indexing indexing) const {
  std::size_t n = 0;
  if (indexing == Indexing::naive) {
    for (const auto& o : orders_) n += o.is_identity() ? 0 : 2;
    return n;
  }
  Permutation cur = Permutation::identity(config_.tokens());
  for (const auto& o : orders_) {
    if (!compose(cur.inverse(), o).is_identity()) ++n;
    cur = o;
  }
  return n + (cur.is_identity() ? 0 : 1);
}

Tensor ZigmaModel::forward(const Tensor& x_t, const ConditionBundle& bundle) const {
  return forward(x_t, bundle, config_.indexing);
}

Tensor ZigmaModel::forward(const Tensor& x_t, const ConditionBundle& bundle, Indexing indexing) const {
  const auto& c = config_;
  if (x_t.rank() != 4 || x_t.dim(1) != c.channels || x_t.dim(2) != c.height || x_t.dim(3) != c.width) {
    throw dk::ShapeError("ZigmaModel: expected [B," + std::to_string(c.channels) + "," + std::to_string(c.height) +
                         "," + std::to_string(c.width) + "], got " + dk::to_string(x_t.shape()));
  }
  const std::size_t batch = x_t.dim(0), m = c.tokens(), d = c.hidden;
  if (bundle.t.size() != batch) throw dk::ShapeError("ZigmaModel: need one timestep per batch element");
  for (double t : bundle.t) {
    if (!std::isfinite(t)) throw std::invalid_argument("ZigmaModel: non-finite timestep");
  }
  std::size_t prefix = 0;
  if (c.conditioning != Conditioning::none) {
    if (!bundle.c) throw std::invalid_argument("ZigmaModel: conditioning enabled but no condition tokens given");
    const Tensor& ct = *bundle.c;
    if (ct.rank() != 3 || ct.dim(0) != batch || ct.dim(1) == 0 || ct.dim(2) != d) {
      throw dk::ShapeError("ZigmaModel: condition tokens must be [B,D_c>=1," + std::to_string(d) + "], got " +
                           dk::to_string(ct.shape()));
    }
    if (c.conditioning == Conditioning::in_context) prefix = ct.dim(1);
  }

  Tensor h = dk::linear(patchify(x_t, c.patch_size), patch_w_, patch_b_);
  if (pos_embed_.defined()) h = dk::add_batch_shared(h, pos_embed_);
  const Tensor temb = time_embedding(bundle.t);
  std::optional<Tensor> pooled;
  if (c.conditioning == Conditioning::in_context) h = dk::concat_seq(*bundle.c, h);
  if (c.conditioning == Conditioning::cross_attention) pooled = dk::mean_seq(*bundle.c);

  auto cross = [&](const ZigmaBlock& block, const Tensor& x) {
    if (!block.cross_attn) return x;
    const auto [p, q] = (*block.adaln_c)(*pooled);
    return dk::add(block.cross_attn->forward(dk::modulate(norm(x), p, q), *bundle.c), x);
  };

  if (indexing == Indexing::naive) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& block = blocks_[i];
      const Permutation order = sequence_order(i, prefix);
      const auto [scale, shift] = block.adaln_t(temb);
      Tensor u = dk::modulate(norm(h), scale, shift);
      const bool moves = !order.is_identity();
      if (moves) u = scan::apply(order, u);
      Tensor y = block.mamba.forward(u, ssm::ScanMode::sequential);
      if (moves) y = scan::apply(order.inverse(), y);
      h = cross(block, dk::add(y, h));
    }
  } else {
    Permutation current = Permutation::identity(prefix + m);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& block = blocks_[i];
      Permutation order = sequence_order(i, prefix);
      const Permutation step = compose(current.inverse(), order);
      if (!step.is_identity()) h = scan::apply(step, h);
      current = std::move(order);
      const auto [scale, shift] = block.adaln_t(temb);
      const Tensor y = block.mamba.forward(dk::modulate(norm(h), scale, shift), ssm::ScanMode::sequential);
      h = cross(block, dk::add(y, h));
    }
    if (!current.is_identity()) h = scan::apply(current.inverse(), h);
  }

  if (prefix > 0) h = dk::slice_seq(h, prefix, m);
  const auto [scale, shift] = (*final_adaln_)(temb);
  const Tensor out = dk::linear(dk::modulate(norm(h), scale, shift), out_w_, out_b_);
  return unpatchify(out, c.patch_size, c.channels, c.height, c.width);
}

void save_parameters(const std::filesystem::path& dir, const dk::ParameterStore& store, dk::Dtype dtype) {
  std::filesystem::create_directories(dir);
  for (const auto& p : store.entries()) dk::save_tensor(dir / p.name, p.tensor, dtype);
}

void load_parameters(const std::filesystem::path& dir, dk::ParameterStore& store) {
  for (auto& p : store.entries()) {
    const Tensor loaded = dk::load_tensor(dir / p.name);
    if (loaded.shape() != p.tensor.shape()) {
      throw dk::ShapeError("parameter " + p.name + ": checkpoint shape " + dk::to_string(loaded.shape()) +
                           " differs from model shape " + dk::to_string(p.tensor.shape()));
    }
    const auto src = loaded.data();
    auto dst = p.tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void save_checkpoint(const std::filesystem::path& dir, const ZigmaModel& model) {
  std::filesystem::create_directories(dir);
  std::ofstream js(dir / "model_config.json", std::ios::trunc);
  if (!js) throw std::runtime_error("cannot write " + (dir / "model_config.json").string());
  js << to_json(model.config()).dump(2) << '\n';
  if (!js) throw std::runtime_error("short write to " + (dir / "model_config.json").string());
  save_parameters(dir, model.params());
}

ModelConfig load_checkpoint_config(const std::filesystem::path& dir) {
  std::ifstream js(dir / "model_config.json");
  if (!js) throw std::runtime_error("missing " + (dir / "model_config.json").string());
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed model_config.json: " + std::string(e.what()));
  }
  return model_config_from_json(j);
}

std::unique_ptr<ZigmaModel> load_checkpoint(const std::filesystem::path& dir) {
  auto model = std::make_unique<ZigmaModel>(load_checkpoint_config(dir));
  load_parameters(dir, model->params());
  return model;
}

}  // namespace zigma::model
