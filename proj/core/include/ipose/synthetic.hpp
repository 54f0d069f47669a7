#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ipose/dataset.hpp"
#include "ipose/image.hpp"

namespace ipose {

/// Image half an instrument enters from. Horizontal flips swap the sides.
enum class Side { kLeft, kRight };

/// Geometry and appearance of one synthetic instrument: a straight shaft
/// entering from the top of the image, ending in a two-pronged tip.
/// Angles are in degrees from straight down, positive toward the image
/// centre.
struct InstrumentStyle {
  std::string name;
  Side side = Side::kLeft;
  double presence_probability = 0.5;
  double min_angle = 0.0;
  double max_angle = 40.0;
  double min_length = 18.0;
  double max_length = 30.0;
  double min_tip_length = 6.0;
  double max_tip_length = 9.0;
  double min_spread = 20.0;
  double max_spread = 35.0;
  double thickness = 2.0;
  double intensity = 0.9;
};

/// Joint names the renderer knows how to place.
inline const std::vector<std::string> kSyntheticJointNames = {"left_tip", "right_tip", "shaft_end",
                                                              "shaft_start"};

struct SyntheticSceneSpec {
  ImageSize size{64, 64};
  std::size_t channels = 1;
  std::vector<InstrumentStyle> instruments;
  std::vector<std::string> joints{"left_tip", "right_tip", "shaft_end"};
  double background = 0.15;
  // Amplitude of a random linear intensity ramp added to the background.
  double background_variation = 0.1;
  double noise_level = 0.03;
  // Minimum distance between any joint and the image border, in pixels.
  double margin = 3.0;
  std::size_t max_retries = 200;
  std::uint64_t seed = 1;
  std::string sequence = "synthetic";

  void validate() const;
};

/// `count` instruments alternating left/right ("left_tool_k", "right_tool_k").
SyntheticSceneSpec default_synthetic_spec(std::size_t num_instruments, std::size_t num_joints,
                                          ImageSize size = {64, 64}, std::uint64_t seed = 1);

std::string synthetic_spec_to_json(const SyntheticSceneSpec& spec);
SyntheticSceneSpec synthetic_spec_from_json(std::string_view json);

/// Random parameters drawn for one instrument in one image.
struct RenderRecord {
  bool present = false;
  Point start;        // shaft start before rounding
  double angle = 0.0;  // degrees
  double length = 0.0;
  double tip_length = 0.0;
  double spread = 0.0;  // degrees
};

struct SyntheticDataset {
  DatasetManifest manifest;              // entries reference images/NNNNNN.pgm|ppm
  std::vector<Image> images;             // 8-bit quantised, matching the files
  std::vector<std::vector<RenderRecord>> renders;  // per image, per instrument
};

/// Pure function of (spec, count). Joints are the rendered key points
/// rounded to the nearest pixel.
SyntheticDataset generate_synthetic(const SyntheticSceneSpec& spec, std::size_t count);

/// Writes images/, manifest.json and render_log.json under `directory`.
void write_synthetic(const SyntheticDataset& dataset, const std::filesystem::path& directory);

/// In-memory samples of a generated dataset.
std::vector<Sample> synthetic_samples(const SyntheticDataset& dataset);

}  // namespace ipose
