#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ipose/tensor.hpp"

namespace ipose {

/// Default variance (pixels^2) of the isotropic Gaussian joint likelihood.
inline constexpr double kDefaultSigma2 = 10.0;
/// Probabilities are clamped to [kLogClamp, 1 - kLogClamp] before logs.
inline constexpr double kLogClamp = 1e-12;

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;

  std::size_t pixels() const { return width * height; }
  bool operator==(const ImageSize&) const = default;
};

/// Sub-pixel image position. Integer coordinates are pixel centres; x grows
/// rightward, y downward, both zero-based.
struct Point {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point&) const = default;
};

/// Integer pixel location.
struct Pixel {
  std::size_t x = 0;
  std::size_t y = 0;

  bool operator==(const Pixel&) const = default;
};

/// Ground truth for one image: presence flag t_m per instrument and, for
/// present instruments, all N joint positions.
struct SceneAnnotation {
  ImageSize size;
  std::vector<bool> presence;                        // M
  std::vector<std::vector<std::optional<Point>>> joints;  // M x N

  static SceneAnnotation empty(ImageSize size, std::size_t instruments, std::size_t joints);

  std::size_t num_instruments() const { return presence.size(); }
  std::size_t num_joints() const { return joints.empty() ? 0 : joints.front().size(); }

  /// Throws DataError when a present instrument misses joints, an absent one
  /// carries joints, or a joint lies outside [0,w) x [0,h).
  void validate() const;

  bool operator==(const SceneAnnotation&) const = default;
};

/// Supervision for one image: presence targets and M x N probability maps,
/// stored contiguously as [M*N, h, w] with map index m * N + n.
struct TargetStack {
  ImageSize size;
  std::size_t num_instruments = 0;
  std::size_t num_joints = 0;
  double sigma2 = kDefaultSigma2;
  std::vector<double> presence;  // M values in {0, 1}
  std::vector<double> maps;

  std::span<const double> map(std::size_t m, std::size_t n) const;
};

/// Network prediction for one image.
struct SceneOutput {
  ImageSize size;
  std::size_t num_instruments = 0;
  std::size_t num_joints = 0;
  std::vector<double> presence;  // M sigmoid outputs
  std::vector<double> maps;      // [M*N, h, w], each map softmax-normalised

  std::span<const double> map(std::size_t m, std::size_t n) const;
};

/// Splits batched network outputs (presence [B,M], maps [B,M*N,H,W]) into
/// per-image SceneOutputs.
std::vector<SceneOutput> split_outputs(const Tensor& presence, const Tensor& maps,
                                       std::size_t num_joints);

/// Gaussian map evaluated at pixel centres and renormalised to sum 1. The
/// density is separable, so each axis is normalised on its own; the axis sums
/// are accumulated symmetrically from both ends so that mirrored inputs give
/// exactly mirrored maps.
std::vector<double> gaussian_map(ImageSize size, Point centre, double sigma2);
/// Every pixel 1 / (w h).
std::vector<double> uniform_map(ImageSize size);

TargetStack synthesize_targets(const SceneAnnotation& annotation, double sigma2 = kDefaultSigma2);

/// Binary cross-entropy -[t log p + (1 - t) log(1 - p)] with clamped p.
double presence_ce(double target, double prob);
/// -sum target * log(clamp(predicted)).
double map_ce(std::span<const double> target, std::span<const double> predicted);

enum class AbsentMapPolicy {
  kUniform,  // supervise the predicted map of an absent instrument toward uniform
  kDrop,     // no map term for absent instruments
};

struct LossOptions {
  AbsentMapPolicy absent_maps = AbsentMapPolicy::kUniform;
  double presence_weight = 1.0;
};

struct LossTerms {
  double presence = 0.0;  // sum_m presence_ce
  double maps = 0.0;      // sum_m sum_n map_ce
  double total = 0.0;     // presence_weight * presence + maps
};

/// Composite scene loss for one image.
LossTerms composite_loss(const SceneOutput& output, const TargetStack& targets,
                         const LossOptions& options = {});

struct CompositeLoss {
  Tensor loss;     // scalar, mean over the batch of the per-image total
  LossTerms terms; // batch means of the individual terms
};

/// Differentiable composite loss over a batch. `presence` is [B,M] sigmoid
/// output, `maps` is [B,M*N,H,W] spatial-softmax output, `targets` has B
/// entries.
CompositeLoss composite_loss(const Tensor& presence, const Tensor& maps,
                             std::span<const TargetStack> targets,
                             const LossOptions& options = {});

struct InstrumentEstimate {
  std::size_t instrument = 0;
  bool present = false;
  double probability = 0.0;
  std::vector<Pixel> joints;  // N argmax locations
};

inline constexpr double kDefaultPresenceThreshold = 0.5;

/// Thresholds presence (present iff prob >= threshold) and takes the first
/// row-major argmax of every joint map.
std::vector<InstrumentEstimate> extract_joints(const SceneOutput& output,
                                               double presence_threshold = kDefaultPresenceThreshold);

/// First row-major argmax of a w x h map.
Pixel argmax_pixel(std::span<const double> map, ImageSize size);

}  // namespace ipose
