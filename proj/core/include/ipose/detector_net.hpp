#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ipose/checkpoint.hpp"
#include "ipose/ops.hpp"
#include "ipose/scene_model.hpp"
#include "ipose/tensor.hpp"

namespace ipose {

/// Architecture hyperparameters of the encoder-decoder detector.
struct NetworkConfig {
  std::size_t depth = 5;
  std::size_t base_features = 64;
  ImageSize input_size{640, 480};
  std::size_t input_channels = 1;
  std::size_t num_instruments = 1;
  std::size_t num_joints = 4;
  std::size_t kernel_size = 3;
  bool skip_connections = true;
  // Hidden units of an optional layer between the bottleneck and the
  // presence logits; 0 means a single dense layer.
  std::size_t head_hidden = 0;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;

  /// Throws ConfigError on any violated constraint.
  void validate() const;

  /// Features of encoder stage `stage` (base * 2^stage).
  std::size_t encoder_channels(std::size_t stage) const;
  /// Features of decoder stage `stage`: half of the mirrored encoder stage.
  std::size_t decoder_channels(std::size_t stage) const;
  /// Channels x height x width of the bottleneck feature map.
  std::size_t bottleneck_size() const;

  bool operator==(const NetworkConfig&) const = default;
};

std::string network_config_to_json(const NetworkConfig& config);
/// Rejects unknown keys and ill-typed values with ConfigError.
NetworkConfig network_config_from_json(std::string_view json);

/// Outputs of one feed-forward pass over a batch.
struct SceneBatch {
  Tensor presence_logits;  // [B, M]
  Tensor presence;         // [B, M], sigmoid
  Tensor map_logits;       // [B, M*N, H, W]
  Tensor maps;             // [B, M*N, H, W], spatial softmax
};

struct ConvBlock {
  Tensor kernel;  // [F, C, k, k]; no bias, batch norm follows
  Tensor gamma;   // [F]
  Tensor beta;    // [F]
};

/// Encoder-decoder detector with a bottleneck classification head.
///
/// Encoder stage i: conv k x k -> batch norm -> ReLU -> 2x2 max pool.
/// Decoder stage j: 2x upsample -> concat mirrored encoder features (when
/// skip connections are on) -> conv k x k -> batch norm -> ReLU.
/// A final 1x1 convolution produces M*N map logits normalised by a spatial
/// softmax; the flattened bottleneck feeds a dense layer producing M
/// presence logits through a sigmoid.
class DetectorNet {
 public:
  static DetectorNet build(const NetworkConfig& config, std::uint64_t seed);
  /// Rebuilds a model from a checkpoint. Throws DataError if any parameter
  /// or statistic is missing, duplicated, unknown or wrongly shaped.
  static DetectorNet from_checkpoint(const Checkpoint& checkpoint);

  const NetworkConfig& config() const { return config_; }

  /// Train mode normalises with batch statistics and updates the running
  /// statistics; infer mode reads them and leaves the model untouched.
  SceneBatch forward(const Tensor& images, Mode mode);
  /// Infer-mode forward without graph recording.
  SceneBatch predict(const Tensor& images) const;

  /// Learnable tensors in a fixed order, with stable names.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  const std::vector<BatchNormState>& batch_norm_states() const { return bn_states_; }

  Checkpoint to_checkpoint() const;

 private:
  SceneBatch run(const Tensor& images, Mode mode, std::vector<BatchNormState>* states) const;
  void check_input(const Tensor& images) const;

  NetworkConfig config_;
  std::vector<ConvBlock> encoder_;
  std::vector<ConvBlock> decoder_;
  std::vector<BatchNormState> bn_states_;  // encoder stages, then decoder stages
  Tensor out_kernel_;                      // [M*N, C, 1, 1]
  Tensor out_bias_;                        // [M*N]
  Tensor hidden_weight_;                   // [bottleneck, hidden] when head_hidden > 0
  Tensor hidden_bias_;
  Tensor head_weight_;                     // [bottleneck or hidden, M]
  Tensor head_bias_;                       // [M]
};

/// Packs images of identical size ([C,H,W] each) into a [B,C,H,W] tensor.
Tensor stack_images(std::span<const std::vector<double>> images, std::size_t channels,
                    ImageSize size);

}  // namespace ipose
