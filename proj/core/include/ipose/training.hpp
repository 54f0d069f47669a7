#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ipose/checkpoint.hpp"
#include "ipose/dataset.hpp"
#include "ipose/detector_net.hpp"
#include "ipose/scene_model.hpp"

namespace ipose {

// ---------------------------------------------------------------------------
// Flip augmentation

enum class FlipAxis { kHorizontal, kVertical };

/// Identity exchange applied together with a mirror: instrument m becomes
/// instrument instruments[m], joint n becomes joints[n].
struct FlipPermutation {
  std::vector<std::size_t> instruments;
  std::vector<std::size_t> joints;

  static FlipPermutation identity(std::size_t num_instruments, std::size_t num_joints);
  /// Pairs names that differ only by a "left" <-> "right" substitution;
  /// unpaired names map to themselves.
  static FlipPermutation lateral(std::span<const std::string> instruments,
                                 std::span<const std::string> joints);

  bool is_involution() const;
  /// Throws ConfigError unless this is an involution of the given sizes.
  void validate(std::size_t num_instruments, std::size_t num_joints) const;

  bool operator==(const FlipPermutation&) const = default;
};

/// Mirrors joint coordinates (x -> w-1-x or y -> h-1-y) and permutes
/// identities. Exactly involutive on [0,w-1] x [0,h-1]; coordinates beyond
/// the last pixel centre are clamped to 0 after mirroring.
SceneAnnotation flip_annotation(const SceneAnnotation& annotation, FlipAxis axis,
                                const FlipPermutation& permutation);

std::pair<Image, SceneAnnotation> augment(const Image& image, const SceneAnnotation& annotation,
                                          FlipAxis axis, const FlipPermutation& permutation);

// ---------------------------------------------------------------------------
// Adam

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter from its grad(). Parameters
/// without a gradient are treated as having a zero gradient. Throws
/// NumericError, leaving parameters and state untouched, if any gradient
/// is non-finite.
void adam_step(std::span<Tensor> parameters, AdamState& state, const AdamOptions& options);

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  AdamOptions adam;
  std::size_t batch_size = 2;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  bool hflip = false;
  bool vflip = false;
  // Empty permutations default to lateral() for hflip and identity for vflip.
  FlipPermutation hflip_permutation;
  FlipPermutation vflip_permutation;
  double sigma2 = kDefaultSigma2;
  LossOptions loss;

  void validate() const;
};

/// `instruments`/`joints` name the schema so permutations can be given by name.
std::string train_config_to_json(const TrainConfig& config, std::span<const std::string> instruments,
                                 std::span<const std::string> joints);
TrainConfig train_config_from_json(std::string_view json, std::span<const std::string> instruments,
                                   std::span<const std::string> joints);

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double presence = 0.0;
  double maps = 0.0;
};

/// Optimiser state carried across resumptions.
struct TrainState {
  AdamState adam;
  std::size_t epochs_done = 0;
  std::size_t steps_done = 0;
};

struct TrainCallbacks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(std::size_t epoch, const DetectorNet&, const TrainState&)> on_epoch_end;
};

struct TrainResult {
  std::vector<LossRecord> history;
  TrainState state;
};

/// Runs epochs x ceil(|dataset| / batch) steps of forward -> composite loss
/// -> backward -> Adam, reshuffling every epoch. Everything random derives
/// from (config.seed, epoch), so a run resumed from an epoch boundary
/// continues exactly like an uninterrupted one.
TrainResult train(DetectorNet& model, std::span<const Sample> dataset, const TrainConfig& config,
                  TrainState start = {}, const TrainCallbacks& callbacks = {});

/// Rejects a dataset whose images or annotations do not fit the model.
void check_dataset(const DetectorNet& model, std::span<const Sample> dataset);

/// Model parameters, statistics, Adam moments and loop counters.
Checkpoint make_checkpoint(const DetectorNet& model, const TrainState& state, std::uint64_t seed);
TrainState restore_train_state(const Checkpoint& checkpoint, const DetectorNet& model);

}  // namespace ipose
