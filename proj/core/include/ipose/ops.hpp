#pragma once

#include <cstddef>
#include <vector>

#include "ipose/tensor.hpp"

namespace ipose {

enum class Mode { kTrain, kInfer };

// ---------------------------------------------------------------------------
// Elementwise and reductions

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// View with a new shape of equal element count (data is copied).
Tensor reshape(const Tensor& x, Shape shape);
/// [B, ...] -> [B, prod(...)]
Tensor flatten(const Tensor& x);

/// Concatenation of two [B,C,H,W] tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Network primitives

/// Zero-padded "same" 2-D convolution, stride 1.
/// input [B,C,H,W], kernel [F,C,k,k] (k odd), bias [F] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

/// Per-channel running statistics for batch normalisation.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;
  bool initialized = false;

  /// Sets mean 0 / variance 1 for `channels` channels and marks initialised.
  void reset(std::size_t channels);
};

/// Spatial batch normalisation over [B,C,H,W].
/// Train mode normalises with the batch statistics (biased variance) and
/// folds them into the running statistics as
///   running = momentum * running + (1 - momentum) * batch.
/// Infer mode uses the running statistics and leaves state untouched.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode);

/// Infer-mode batch normalisation against read-only statistics.
Tensor batch_norm_infer(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                        const BatchNormState& state);

/// 2x2 max pool, stride 2. Ties resolve to the first element in row-major
/// order, which also receives the whole gradient.
Tensor max_pool2(const Tensor& input);

/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& input);

/// input [B,D] x weight [D,K] + bias [K].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Softmax over the H*W pixels of each (batch, channel) map.
Tensor spatial_softmax(const Tensor& input);

}  // namespace ipose
