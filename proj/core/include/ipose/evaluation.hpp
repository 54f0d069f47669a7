#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ipose/dataset.hpp"
#include "ipose/detector_net.hpp"
#include "ipose/image.hpp"
#include "ipose/scene_model.hpp"

namespace ipose {

/// Detector output for one frame: one estimate per instrument.
using FramePrediction = std::vector<InstrumentEstimate>;

struct EvalOptions {
  std::size_t max_radius = 40;
  double presence_threshold = kDefaultPresenceThreshold;
  // Radius singled out in the summary.
  std::size_t summary_radius = 15;
};

/// Metrics of one (instrument, joint) pair. `accuracy` and `mean_error`
/// are empty when no frame shows the instrument.
struct JointMetrics {
  std::size_t instrument = 0;
  std::size_t joint = 0;
  std::size_t included = 0;  // frames with the instrument present in ground truth
  std::size_t excluded = 0;
  std::vector<double> accuracy;  // radii 0..max_radius
  std::optional<double> mean_error;

  bool defined() const { return included > 0; }
};

struct EvalReport {
  std::vector<std::string> instruments;
  std::vector<std::string> joints;
  std::size_t frames = 0;
  std::size_t max_radius = 40;
  std::size_t summary_radius = 15;
  double presence_threshold = kDefaultPresenceThreshold;
  std::vector<JointMetrics> pairs;     // index m * N + n
  std::vector<double> presence_rates;  // per instrument

  const JointMetrics& pair(std::size_t m, std::size_t n) const { return pairs.at(m * joints.size() + n); }
  /// Fraction of all joint predictions (over defined pairs and included
  /// frames) within `radius`; nullopt when nothing was included.
  std::optional<double> pooled_accuracy(std::size_t radius) const;
  /// Fraction of (frame, instrument) presence decisions that were correct.
  double pooled_presence_rate() const;
};

/// Euclidean errors of joint n of instrument m over the frames whose ground
/// truth marks the instrument present.
std::vector<double> joint_errors(std::span<const FramePrediction> predictions,
                                 std::span<const SceneAnnotation> ground_truth, std::size_t instrument,
                                 std::size_t joint);

/// curve[r] = fraction of errors <= r for r = 0..max_radius; nullopt for no errors.
std::optional<std::vector<double>> accuracy_curve(std::span<const double> errors, std::size_t max_radius);

std::optional<double> mean_pixel_error(std::span<const double> errors);

/// Per instrument, the fraction of frames whose predicted presence flag
/// equals the ground truth.
std::vector<double> presence_rate(std::span<const FramePrediction> predictions,
                                  std::span<const SceneAnnotation> ground_truth);

EvalReport evaluate(std::span<const FramePrediction> predictions,
                    std::span<const SceneAnnotation> ground_truth, std::vector<std::string> instruments,
                    std::vector<std::string> joints, const EvalOptions& options = {});

/// Runs inference over `samples` in batches and extracts estimates.
std::vector<FramePrediction> predict_frames(const DetectorNet& model, std::span<const Sample> samples,
                                            double presence_threshold = kDefaultPresenceThreshold,
                                            std::size_t batch_size = 8);

// ---------------------------------------------------------------------------
// Report files

/// "threshold" then one "<instrument>/<joint>" column per pair; undefined
/// pairs leave their cells empty.
std::string curves_csv(const EvalReport& report);
std::string summary_text(const EvalReport& report);
std::string report_json(const EvalReport& report);

struct CurveTable {
  std::vector<std::string> columns;  // excluding "threshold"
  std::vector<std::size_t> thresholds;
  std::vector<std::vector<std::optional<double>>> values;  // [column][row]
};

/// Inverse of curves_csv. Throws DataError on malformed input.
CurveTable parse_curves_csv(std::string_view text);

/// Maps curve coordinates to plot pixels and back.
struct PlotFrame {
  std::size_t width = 640;
  std::size_t height = 400;
  std::size_t margin = 40;
  std::size_t max_radius = 40;

  Point to_pixel(double radius, double accuracy) const;
  double accuracy_at_row(double row) const;
};

/// Line chart of every defined curve on a white RGB canvas with axes and
/// gridlines every 5 px of radius and 10 % of accuracy.
Image plot_curves(const EvalReport& report, const PlotFrame& frame);
/// Distinct colour of curve `index`.
Rgb curve_colour(std::size_t index);

/// Writes curves.csv, summary.txt and report.json (plus curves.ppm when
/// `plot` is set) into `directory`, creating it if needed. Throws DataError
/// if a file cannot be written.
void emit_report(const EvalReport& report, const std::filesystem::path& directory, bool plot = false);

}  // namespace ipose
