#pragma once

// Differentiable network primitives on [B, C, spatial...] tensors with two or
// three spatial axes.

#include <random>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

enum class Mode { train, eval };

using Rng = std::mt19937_64;

/// Convolution weights. For `conv` the weight is [out, in, k...]; for
/// `upconv` it is [in, out, k...] with the kernel equal to the stride.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;  // [out]
  std::vector<std::size_t> stride;   // per spatial axis
  std::vector<std::size_t> padding;  // per spatial axis
};

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  static BatchNormParams make(std::size_t channels);
};

/// Stride-1 cross-correlation plus bias.
template <typename T>
Tensor<T> conv(const Tensor<T>& input, const ConvParams<T>& p);

/// Per-channel normalization. Train mode normalizes with batch statistics and
/// folds them into the running estimates (unbiased variance); eval mode uses
/// the running estimates only.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Windowed max; extents must be divisible by the stride. Ties go to the
/// first element in scan order.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& input, const std::vector<std::size_t>& window,
                  const std::vector<std::size_t>& stride);

/// Transposed convolution with kernel == stride (non-overlapping scatter).
template <typename T>
Tensor<T> upconv(const Tensor<T>& input, const ConvParams<T>& p);

/// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode.
template <typename T>
Tensor<T> dropout(const Tensor<T>& input, double rate, Mode mode, Rng& rng);

/// Softmax over axis 1, stabilized by subtracting the per-location max.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input);

/// Uniform [0,1) draw with a fixed bit recipe, so results do not depend on
/// the standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace cardioseg
