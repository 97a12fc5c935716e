#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dcvit/ops.hpp"
#include "dcvit/tensor.hpp"

namespace dcvit {

enum class HeadMode { kRegression, kClassification };

using Pair = std::pair<std::size_t, std::size_t>;

/// Hyperparameters of the convolutional patch embedding, the transformer
/// encoder and the read-out head. Defaults give the full-size network.
struct ModelConfig {
  std::size_t channels = 129;   // electrode rows
  std::size_t timesteps = 500;  // 1 s at 500 Hz

  std::size_t temporal_filters = 256;
  Pair temporal_kernel{1, 36};
  Pair temporal_stride{1, 36};
  Pair temporal_pad{0, 2};

  bool ds_block = true;
  Pair ds_depthwise_kernel{3, 3};  // stride 1, same padding
  std::size_t ds_pointwise_out = 512;

  Pair channel_kernel{8, 1};
  Pair channel_stride{8, 1};
  Pair channel_pad{1, 0};

  std::size_t token_dim = 512;
  std::size_t hidden_dim = 768;
  std::size_t encoder_depth = 12;
  std::size_t heads = 12;
  std::size_t mlp_dim = 3072;
  std::size_t head_hidden = 768;
  double dropout_p = 0.1;
  double norm_eps = 1e-6;

  HeadMode head_mode = HeadMode::kRegression;
  std::size_t num_classes = 25;

  // Regression outputs are raw * output_scale + output_offset (pixels).
  std::pair<double, double> output_offset{400.0, 300.0};
  std::pair<double, double> output_scale{400.0, 300.0};

  /// Throws ConfigError / ShapeError when the configuration cannot be built.
  void validate() const;
  std::size_t outputs() const {
    return head_mode == HeadMode::kRegression ? 2 : num_classes;
  }
  bool operator==(const ModelConfig&) const = default;
};

/// Small configuration used by tests and desk-scale experiments.
ModelConfig tiny_config();

// Convolution stages derived from a configuration.
Conv2dSpec temporal_conv_spec(const ModelConfig& c);
Conv2dSpec ds_depthwise_spec(const ModelConfig& c);
Conv2dSpec ds_pointwise_spec(const ModelConfig& c);
Conv2dSpec channel_conv_spec(const ModelConfig& c);

/// Rows x columns of the token grid after the channel-depthwise stage.
Pair token_grid(const ModelConfig& c);

/// Insertion-ordered name -> tensor map with unique names.
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor tensor);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);
  std::size_t size() const { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Trainable parameters plus batch-norm running statistics. Move-only;
/// clone() makes an independent copy.
struct Model {
  ModelConfig config;
  ParameterStore parameters;
  ParameterStore buffers;

  Model() = default;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const;
  void zero_grad();
};

/// Value snapshot of every parameter and buffer, in store order.
struct ModelState {
  std::vector<std::vector<double>> parameters;
  std::vector<std::vector<double>> buffers;
};

ModelState snapshot(const Model& model);
void restore(Model& model, const ModelState& state);

Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Convolutional patch embedding: [B, 1, C, T] -> [B, tokens, token_dim].
Tensor patch_embed(const Model& model, const Tensor& batch, bool training);

/// Full network. Regression returns [B, 2] pixel coordinates, classification
/// [B, k] logits. Training mode applies dropout (seeded) and updates the
/// batch-norm running statistics.
Tensor forward(const Model& model, const Tensor& batch, bool training, std::uint64_t seed = 0);

/// Number of trainable scalars (buffers excluded).
std::size_t count_parameters(const Model& model);

/// Flips the depthwise-separable block on or off.
ModelConfig ds_block_toggle(ModelConfig config);

/// Rounds every parameter and buffer to the nearest float, the on-disk precision.
void quantize_to_f32(Model& model);

}  // namespace dcvit
