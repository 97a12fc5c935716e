#include "dcvit/model.hpp"

#include <cmath>
#include <random>

#include "dcvit/error.hpp"

namespace dcvit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t site_seed(std::uint64_t seed, std::uint64_t site) {
  return splitmix64(seed ^ splitmix64(site + 1));
}

Tensor truncated_normal(const Shape& shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    x = z * stddev;
  }
  return Tensor(shape, std::move(v), true);
}

Tensor fan_in_uniform(const Shape& shape, std::mt19937_64& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), true);
}

Tensor param_zeros(const Shape& shape) { return Tensor::zeros(shape, true); }
Tensor param_ones(const Shape& shape) { return Tensor::ones(shape, true); }

std::string block_prefix(std::size_t i) { return "encoder.block" + std::to_string(i) + "."; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 8;
  c.timesteps = 40;
  c.temporal_filters = 8;
  c.ds_pointwise_out = 16;
  c.token_dim = 16;
  c.hidden_dim = 32;
  c.encoder_depth = 2;
  c.heads = 2;
  c.mlp_dim = 64;
  c.head_hidden = 32;
  return c;
}

Conv2dSpec temporal_conv_spec(const ModelConfig& c) {
  Conv2dSpec s;
  s.in_channels = 1;
  s.out_channels = c.temporal_filters;
  s.kernel = c.temporal_kernel;
  s.stride = c.temporal_stride;
  s.padding = c.temporal_pad;
  return s;
}

Conv2dSpec ds_depthwise_spec(const ModelConfig& c) {
  Conv2dSpec s;
  s.in_channels = c.temporal_filters;
  s.out_channels = c.temporal_filters;
  s.kernel = c.ds_depthwise_kernel;
  s.stride = {1, 1};
  s.padding = {c.ds_depthwise_kernel.first / 2, c.ds_depthwise_kernel.second / 2};
  s.groups = c.temporal_filters;
  return s;
}

Conv2dSpec ds_pointwise_spec(const ModelConfig& c) {
  Conv2dSpec s;
  s.in_channels = c.temporal_filters;
  s.out_channels = c.ds_pointwise_out;
  return s;
}

Conv2dSpec channel_conv_spec(const ModelConfig& c) {
  Conv2dSpec s;
  s.in_channels = c.ds_block ? c.ds_pointwise_out : c.temporal_filters;
  s.out_channels = c.token_dim;
  s.kernel = c.channel_kernel;
  s.stride = c.channel_stride;
  s.padding = c.channel_pad;
  s.groups = s.in_channels;
  return s;
}

Pair token_grid(const ModelConfig& c) {
  auto [h, w] = temporal_conv_spec(c).output_size(c.channels, c.timesteps);
  if (c.ds_block) std::tie(h, w) = ds_depthwise_spec(c).output_size(h, w);
  return channel_conv_spec(c).output_size(h, w);
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(channels, "channels");
  positive(timesteps, "timesteps");
  positive(temporal_filters, "temporal_filters");
  positive(token_dim, "token_dim");
  positive(hidden_dim, "hidden_dim");
  positive(heads, "heads");
  positive(mlp_dim, "mlp_dim");
  positive(head_hidden, "head_hidden");
  if (ds_block) positive(ds_pointwise_out, "ds_pointwise_out");
  if (ds_block && (ds_depthwise_kernel.first % 2 == 0 || ds_depthwise_kernel.second % 2 == 0)) {
    throw ConfigError("model config: ds_depthwise_kernel must be odd for same padding");
  }
  if (hidden_dim % heads != 0) throw ConfigError("model config: hidden_dim % heads != 0");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model config: dropout_p in [0,1)");
  if (!(norm_eps > 0.0)) throw ConfigError("model config: norm_eps must be positive");
  if (head_mode == HeadMode::kClassification && num_classes < 2) {
    throw ConfigError("model config: classification head needs at least 2 classes");
  }
  temporal_conv_spec(*this).validate();
  if (ds_block) {
    ds_depthwise_spec(*this).validate();
    ds_pointwise_spec(*this).validate();
  }
  channel_conv_spec(*this).validate();
  token_grid(*this);  // throws on degenerate grids
}

ModelConfig ds_block_toggle(ModelConfig config) {
  config.ds_block = !config.ds_block;
  return config;
}

// ---------------------------------------------------------------------------
// Parameter storage

void ParameterStore::add(std::string name, Tensor tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

const Tensor& ParameterStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return entries_[it->second].second;
}

Tensor& ParameterStore::at(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).at(name));
}

Model Model::clone() const {
  Model m;
  m.config = config;
  for (const auto& [name, t] : parameters) m.parameters.add(name, t.clone());
  for (const auto& [name, t] : buffers) m.buffers.add(name, t.clone());
  return m;
}

void Model::zero_grad() {
  for (auto& [name, t] : parameters) t.zero_grad();
}

ModelState snapshot(const Model& model) {
  ModelState s;
  for (const auto& [name, t] : model.parameters) s.parameters.emplace_back(t.data().begin(), t.data().end());
  for (const auto& [name, t] : model.buffers) s.buffers.emplace_back(t.data().begin(), t.data().end());
  return s;
}

void restore(Model& model, const ModelState& state) {
  if (state.parameters.size() != model.parameters.size() ||
      state.buffers.size() != model.buffers.size()) {
    throw ShapeError("restore: snapshot does not match model layout");
  }
  std::size_t i = 0;
  for (auto& [name, t] : model.parameters) {
    auto dst = t.mutable_data();
    if (dst.size() != state.parameters[i].size()) throw ShapeError("restore: size of " + name);
    std::copy(state.parameters[i].begin(), state.parameters[i].end(), dst.begin());
    ++i;
  }
  i = 0;
  for (auto& [name, t] : model.buffers) {
    auto dst = t.mutable_data();
    if (dst.size() != state.buffers[i].size()) throw ShapeError("restore: size of " + name);
    std::copy(state.buffers[i].begin(), state.buffers[i].end(), dst.begin());
    ++i;
  }
}

void quantize_to_f32(Model& model) {
  auto round = [](Tensor& t) {
    for (double& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto& [name, t] : model.parameters) round(t);
  for (auto& [name, t] : model.buffers) round(t);
}

std::size_t count_parameters(const Model& model) {
  std::size_t n = 0;
  for (const auto& [name, t] : model.parameters) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Construction

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  std::mt19937_64 rng(seed);
  auto& p = m.parameters;

  auto add_conv = [&](const std::string& prefix, const Conv2dSpec& spec) {
    p.add(prefix + ".weight", fan_in_uniform(spec.weight_shape(), rng));
    p.add(prefix + ".bias", param_zeros({spec.out_channels}));
  };
  auto add_bn = [&](const std::string& prefix, std::size_t channels) {
    p.add(prefix + ".gamma", param_ones({channels}));
    p.add(prefix + ".beta", param_zeros({channels}));
    m.buffers.add(prefix + ".running_mean", Tensor::zeros({channels}));
    m.buffers.add(prefix + ".running_var", Tensor::ones({channels}));
  };
  auto add_linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    p.add(prefix + ".weight", truncated_normal({out, in}, rng, 0.02));
    p.add(prefix + ".bias", param_zeros({out}));
  };
  auto add_ln = [&](const std::string& prefix, std::size_t d) {
    p.add(prefix + ".gain", param_ones({d}));
    p.add(prefix + ".offset", param_zeros({d}));
  };

  add_conv("patch.temporal_conv", temporal_conv_spec(config));
  add_bn("patch.temporal_bn", config.temporal_filters);
  if (config.ds_block) {
    add_conv("patch.ds_depthwise", ds_depthwise_spec(config));
    add_conv("patch.ds_pointwise", ds_pointwise_spec(config));
    add_bn("patch.ds_bn", config.ds_pointwise_out);
  }
  add_conv("patch.channel_conv", channel_conv_spec(config));
  add_linear("embed.projection", config.token_dim, config.hidden_dim);

  const auto [rows, cols] = token_grid(config);
  const std::size_t tokens = rows * cols + 1;
  p.add("embed.class_token", truncated_normal({1, 1, config.hidden_dim}, rng, 0.02));
  p.add("embed.position", truncated_normal({1, tokens, config.hidden_dim}, rng, 0.02));

  for (std::size_t i = 0; i < config.encoder_depth; ++i) {
    const std::string b = block_prefix(i);
    add_ln(b + "norm1", config.hidden_dim);
    add_linear(b + "attn.query", config.hidden_dim, config.hidden_dim);
    add_linear(b + "attn.key", config.hidden_dim, config.hidden_dim);
    add_linear(b + "attn.value", config.hidden_dim, config.hidden_dim);
    add_linear(b + "attn.out", config.hidden_dim, config.hidden_dim);
    add_ln(b + "norm2", config.hidden_dim);
    add_linear(b + "mlp.fc1", config.hidden_dim, config.mlp_dim);
    add_linear(b + "mlp.fc2", config.mlp_dim, config.hidden_dim);
  }
  add_ln("encoder.final_norm", config.hidden_dim);
  add_linear("head.fc1", config.hidden_dim, config.head_hidden);
  add_linear("head.fc2", config.head_hidden, config.outputs());
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

Tensor checked(Tensor t, const std::string& where) {
  check_finite(t, where);
  return t;
}

Tensor conv_stage(const Model& m, const std::string& name, const Tensor& x, const Conv2dSpec& spec) {
  return checked(conv2d(x, m.parameters.at(name + ".weight"), m.parameters.at(name + ".bias"), spec),
                 name);
}

Tensor bn_stage(const Model& m, const std::string& name, const Tensor& x, bool training) {
  Tensor running_mean = m.buffers.at(name + ".running_mean");
  Tensor running_var = m.buffers.at(name + ".running_var");
  return checked(batch_norm2d(x, m.parameters.at(name + ".gamma"), m.parameters.at(name + ".beta"),
                              running_mean, running_var, training),
                 name);
}

Tensor linear_stage(const Model& m, const std::string& name, const Tensor& x) {
  return linear(x, m.parameters.at(name + ".weight"), m.parameters.at(name + ".bias"));
}

Tensor ln_stage(const Model& m, const std::string& name, const Tensor& x) {
  return layer_norm(x, m.parameters.at(name + ".gain"), m.parameters.at(name + ".offset"),
                    m.config.norm_eps);
}

Tensor attention(const Model& m, const std::string& prefix, const Tensor& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t tokens = x.dim(1);
  const std::size_t d = m.config.hidden_dim;
  const std::size_t heads = m.config.heads;
  const std::size_t dh = d / heads;
  auto split = [&](const Tensor& t) {
    return permute(reshape(t, {batch, tokens, heads, dh}), {0, 2, 1, 3});
  };
  Tensor q = split(linear_stage(m, prefix + "query", x));
  Tensor k = split(linear_stage(m, prefix + "key", x));
  Tensor v = split(linear_stage(m, prefix + "value", x));
  Tensor scores = scale(matmul(q, transpose(k, 2, 3)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs = softmax(scores, -1);
  Tensor ctx = permute(matmul(probs, v), {0, 2, 1, 3});
  return linear_stage(m, prefix + "out", reshape(ctx, {batch, tokens, d}));
}

}  // namespace

Tensor patch_embed(const Model& m, const Tensor& batch, bool training) {
  const ModelConfig& c = m.config;
  const Shape expected{batch.shape().empty() ? 0 : batch.dim(0), 1, c.channels, c.timesteps};
  if (batch.rank() != 4 || batch.shape() != expected) {
    throw ShapeError("forward: batch " + shape_str(batch.shape()) + " expected [B, 1, " +
                     std::to_string(c.channels) + ", " + std::to_string(c.timesteps) + "]");
  }
  Tensor x = conv_stage(m, "patch.temporal_conv", batch, temporal_conv_spec(c));
  x = gelu(bn_stage(m, "patch.temporal_bn", x, training));
  if (c.ds_block) {
    x = conv_stage(m, "patch.ds_depthwise", x, ds_depthwise_spec(c));
    x = conv_stage(m, "patch.ds_pointwise", x, ds_pointwise_spec(c));
    x = gelu(bn_stage(m, "patch.ds_bn", x, training));
  }
  x = conv_stage(m, "patch.channel_conv", x, channel_conv_spec(c));
  const std::size_t b = x.dim(0);
  const std::size_t tokens = x.dim(2) * x.dim(3);
  // [B, D, H, W] -> [B, H*W, D], row-major over the grid.
  return transpose(reshape(x, {b, c.token_dim, tokens}), 1, 2);
}

Tensor forward(const Model& m, const Tensor& batch, bool training, std::uint64_t seed) {
  const ModelConfig& c = m.config;
  const double p = training ? c.dropout_p : 0.0;
  std::uint64_t site = 0;
  auto drop = [&](const Tensor& t) { return dropout(t, p, training, site_seed(seed, site++)); };

  Tensor tokens = patch_embed(m, batch, training);
  const std::size_t b = tokens.dim(0);
  Tensor x = checked(linear_stage(m, "embed.projection", tokens), "embed.projection");
  Tensor cls = broadcast_to(m.parameters.at("embed.class_token"), {b, 1, c.hidden_dim});
  x = add(concat({cls, x}, 1), m.parameters.at("embed.position"));
  x = drop(x);

  for (std::size_t i = 0; i < c.encoder_depth; ++i) {
    const std::string pre = block_prefix(i);
    x = add(x, drop(attention(m, pre + "attn.", ln_stage(m, pre + "norm1", x))));
    Tensor h = ln_stage(m, pre + "norm2", x);
    h = linear_stage(m, pre + "mlp.fc2", gelu(linear_stage(m, pre + "mlp.fc1", h)));
    x = checked(add(x, drop(h)), pre.substr(0, pre.size() - 1));
  }
  x = ln_stage(m, "encoder.final_norm", x);
  Tensor cls_out = reshape(slice(x, 1, 0, 1), {b, c.hidden_dim});

  Tensor h = drop(linear_stage(m, "head.fc1", cls_out));
  Tensor out = linear_stage(m, "head.fc2", h);
  if (c.head_mode == HeadMode::kRegression) {
    Tensor s = Tensor({1, 2}, {c.output_scale.first, c.output_scale.second});
    Tensor o = Tensor({1, 2}, {c.output_offset.first, c.output_offset.second});
    out = add(mul(out, s), o);
  }
  return checked(out, "head");
}

}  // namespace dcvit
