#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dcvit/tensor.hpp"

namespace dcvit {

/// Grouped 2-D cross-correlation parameters (no kernel flip).
struct Conv2dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::pair<std::size_t, std::size_t> kernel{1, 1};
  std::pair<std::size_t, std::size_t> stride{1, 1};
  std::pair<std::size_t, std::size_t> padding{0, 0};
  std::size_t groups = 1;

  void validate() const;
  bool depthwise() const { return groups == in_channels; }
  /// floor((size + 2*pad - kernel) / stride) + 1; throws ShapeError when < 1.
  std::pair<std::size_t, std::size_t> output_size(std::size_t height, std::size_t width) const;
  Shape weight_shape() const {
    return {out_channels, in_channels / groups, kernel.first, kernel.second};
  }
};

// Pass an undefined Tensor for `bias` to omit it.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const Conv2dSpec& spec);
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
/// [..., M, K] x [..., K, N]; the right operand may also be a plain [K, N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// Normalizes over the last axis. `gain`/`offset` may be undefined.
Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& offset,
                  double eps = 1e-5);
/// Per-channel normalization of [B, C, H, W]. In training mode batch
/// statistics are used and the running buffers are updated in place.
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                    Tensor& running_mean, Tensor& running_var, bool training,
                    double momentum = 0.1, double eps = 1e-5);
Tensor softmax(const Tensor& input, int axis);
Tensor log_softmax(const Tensor& input, int axis);

/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& input);
/// Inverted dropout; identity when `training` is false or p == 0.
Tensor dropout(const Tensor& input, double p, bool training, std::uint64_t seed);

/// Mean negative log-likelihood of `targets` under softmax(logits), logits [B, k].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace dcvit
