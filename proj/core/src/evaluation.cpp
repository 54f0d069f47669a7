#include "ipose/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ipose/error.hpp"
#include "ipose/training.hpp"
#include "json_util.hpp"

namespace ipose {

namespace {

using detail::json;

void check_aligned(std::span<const FramePrediction> predictions,
                   std::span<const SceneAnnotation> ground_truth) {
  if (predictions.size() != ground_truth.size()) {
    throw ShapeError("evaluation: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(ground_truth.size()) + " frames");
  }
  for (std::size_t f = 0; f < predictions.size(); ++f) {
    const auto& gt = ground_truth[f];
    if (predictions[f].size() != gt.num_instruments()) {
      throw ShapeError("evaluation: frame " + std::to_string(f) + " has " +
                       std::to_string(predictions[f].size()) + " instrument estimates, expected " +
                       std::to_string(gt.num_instruments()));
    }
    for (const auto& est : predictions[f]) {
      if (est.joints.size() != gt.num_joints()) {
        throw ShapeError("evaluation: frame " + std::to_string(f) + " has the wrong joint count");
      }
    }
  }
}

// Shortest decimal form that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

std::vector<double> joint_errors(std::span<const FramePrediction> predictions,
                                 std::span<const SceneAnnotation> ground_truth, std::size_t instrument,
                                 std::size_t joint) {
  check_aligned(predictions, ground_truth);
  std::vector<double> errors;
  for (std::size_t f = 0; f < predictions.size(); ++f) {
    const auto& gt = ground_truth[f];
    if (instrument >= gt.num_instruments() || joint >= gt.num_joints()) {
      throw ShapeError("joint_errors: pair out of range");
    }
    if (!gt.presence[instrument]) continue;
    const Point truth = *gt.joints[instrument][joint];
    const Pixel guess = predictions[f][instrument].joints[joint];
    const double dx = static_cast<double>(guess.x) - truth.x;
    const double dy = static_cast<double>(guess.y) - truth.y;
    // sqrt is correctly rounded, so integer distances come out exact.
    errors.push_back(std::sqrt(dx * dx + dy * dy));
  }
  return errors;
}

std::optional<std::vector<double>> accuracy_curve(std::span<const double> errors, std::size_t max_radius) {
  if (errors.empty()) return std::nullopt;
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> curve(max_radius + 1);
  const double total = static_cast<double>(sorted.size());
  for (std::size_t r = 0; r <= max_radius; ++r) {
    const auto within = std::upper_bound(sorted.begin(), sorted.end(), static_cast<double>(r)) - sorted.begin();
    curve[r] = static_cast<double>(within) / total;
  }
  return curve;
}

std::optional<double> mean_pixel_error(std::span<const double> errors) {
  if (errors.empty()) return std::nullopt;
  double sum = 0.0;
  for (double e : errors) sum += e;
  return sum / static_cast<double>(errors.size());
}

std::vector<double> presence_rate(std::span<const FramePrediction> predictions,
                                  std::span<const SceneAnnotation> ground_truth) {
  check_aligned(predictions, ground_truth);
  if (ground_truth.empty()) return {};
  const std::size_t m_count = ground_truth.front().num_instruments();
  std::vector<std::size_t> correct(m_count, 0);
  for (std::size_t f = 0; f < predictions.size(); ++f) {
    if (ground_truth[f].num_instruments() != m_count) throw ShapeError("presence_rate: ragged frames");
    for (std::size_t m = 0; m < m_count; ++m) {
      if (predictions[f][m].present == ground_truth[f].presence[m]) ++correct[m];
    }
  }
  std::vector<double> rates(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    rates[m] = static_cast<double>(correct[m]) / static_cast<double>(predictions.size());
  }
  return rates;
}

EvalReport evaluate(std::span<const FramePrediction> predictions,
                    std::span<const SceneAnnotation> ground_truth, std::vector<std::string> instruments,
                    std::vector<std::string> joints, const EvalOptions& options) {
  check_aligned(predictions, ground_truth);
  if (ground_truth.empty()) throw DataError("evaluation: no frames");
  for (const auto& gt : ground_truth) {
    if (gt.num_instruments() != instruments.size() || gt.num_joints() != joints.size()) {
      throw ShapeError("evaluation: annotations do not match the instrument/joint names");
    }
  }
  if (options.summary_radius > options.max_radius) {
    throw ConfigError("evaluation: summary radius exceeds max radius");
  }
  EvalReport report;
  report.frames = ground_truth.size();
  report.max_radius = options.max_radius;
  report.summary_radius = options.summary_radius;
  report.presence_threshold = options.presence_threshold;
  for (std::size_t m = 0; m < instruments.size(); ++m) {
    for (std::size_t n = 0; n < joints.size(); ++n) {
      const auto errors = joint_errors(predictions, ground_truth, m, n);
      JointMetrics metrics;
      metrics.instrument = m;
      metrics.joint = n;
      metrics.included = errors.size();
      metrics.excluded = report.frames - errors.size();
      if (auto curve = accuracy_curve(errors, options.max_radius)) metrics.accuracy = std::move(*curve);
      metrics.mean_error = mean_pixel_error(errors);
      report.pairs.push_back(std::move(metrics));
    }
  }
  report.presence_rates = presence_rate(predictions, ground_truth);
  report.instruments = std::move(instruments);
  report.joints = std::move(joints);
  return report;
}

std::optional<double> EvalReport::pooled_accuracy(std::size_t radius) const {
  if (radius > max_radius) throw ConfigError("pooled_accuracy: radius exceeds max radius");
  double hits = 0.0;
  std::size_t total = 0;
  for (const auto& p : pairs) {
    if (!p.defined()) continue;
    hits += p.accuracy[radius] * static_cast<double>(p.included);
    total += p.included;
  }
  if (total == 0) return std::nullopt;
  return hits / static_cast<double>(total);
}

double EvalReport::pooled_presence_rate() const {
  if (presence_rates.empty()) return 0.0;
  double sum = 0.0;
  for (double r : presence_rates) sum += r;
  return sum / static_cast<double>(presence_rates.size());
}

std::vector<FramePrediction> predict_frames(const DetectorNet& model, std::span<const Sample> samples,
                                            double presence_threshold, std::size_t batch_size) {
  check_dataset(model, samples);
  if (batch_size == 0) throw ConfigError("predict_frames: batch size must be positive");
  const auto& cfg = model.config();
  std::vector<FramePrediction> out;
  out.reserve(samples.size());
  for (std::size_t first = 0; first < samples.size(); first += batch_size) {
    const std::size_t last = std::min(samples.size(), first + batch_size);
    std::vector<std::vector<double>> images;
    for (std::size_t i = first; i < last; ++i) images.push_back(samples[i].image.pixels);
    const auto result = model.predict(stack_images(images, cfg.input_channels, cfg.input_size));
    for (const auto& scene : split_outputs(result.presence, result.maps, cfg.num_joints)) {
      out.push_back(extract_joints(scene, presence_threshold));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report files

std::string curves_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "threshold";
  for (const auto& p : report.pairs) {
    os << ',' << report.instruments[p.instrument] << '/' << report.joints[p.joint];
  }
  os << '\n';
  for (std::size_t r = 0; r <= report.max_radius; ++r) {
    os << r;
    for (const auto& p : report.pairs) {
      os << ',';
      if (p.defined()) os << format_double(p.accuracy[r]);
    }
    os << '\n';
  }
  return os.str();
}

CurveTable parse_curves_csv(std::string_view text) {
  CurveTable table;
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty()) throw DataError("curves CSV is empty");
  auto header = split_line(lines.front());
  if (header.empty() || header.front() != "threshold") throw DataError("curves CSV must start with 'threshold'");
  table.columns.assign(header.begin() + 1, header.end());
  table.values.resize(table.columns.size());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split_line(lines[i]);
    if (cells.size() != header.size()) {
      throw DataError("curves CSV row " + std::to_string(i) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    }
    std::size_t radius = 0;
    const auto& rc = cells.front();
    if (std::from_chars(rc.data(), rc.data() + rc.size(), radius).ptr != rc.data() + rc.size() || rc.empty()) {
      throw DataError("curves CSV row " + std::to_string(i) + ": bad threshold '" + rc + "'");
    }
    table.thresholds.push_back(radius);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      if (cell.empty()) {
        table.values[c - 1].push_back(std::nullopt);
        continue;
      }
      double v = 0.0;
      if (std::from_chars(cell.data(), cell.data() + cell.size(), v).ptr != cell.data() + cell.size()) {
        throw DataError("curves CSV row " + std::to_string(i) + ": bad value '" + cell + "'");
      }
      table.values[c - 1].push_back(v);
    }
  }
  return table;
}

std::string summary_text(const EvalReport& report) {
  std::ostringstream os;
  const auto r = report.summary_radius;
  os << "frames: " << report.frames << '\n';
  os << "presence threshold: " << format_fixed(report.presence_threshold, 3) << '\n';
  os << "max radius: " << report.max_radius << " px\n\n";
  os << "joint accuracy at " << r << " px, mean error (px), frames included/excluded\n";
  for (const auto& p : report.pairs) {
    os << "  " << report.instruments[p.instrument] << '/' << report.joints[p.joint] << ": ";
    if (!p.defined()) {
      os << "absent (no frame shows the instrument)\n";
      continue;
    }
    os << "accuracy@" << r << "px=" << format_fixed(100.0 * p.accuracy[r], 2) << "%"
       << " mean_error=" << format_fixed(*p.mean_error, 3) << " included=" << p.included
       << " excluded=" << p.excluded << '\n';
  }
  const auto pooled = report.pooled_accuracy(r);
  os << "  all joints: accuracy@" << r << "px="
     << (pooled ? format_fixed(100.0 * *pooled, 2) + "%" : std::string("absent")) << '\n';
  os << "\npresence classification rate\n";
  for (std::size_t m = 0; m < report.presence_rates.size(); ++m) {
    os << "  " << report.instruments[m] << ": " << format_fixed(100.0 * report.presence_rates[m], 2) << "%\n";
  }
  os << "  mean: " << format_fixed(100.0 * report.pooled_presence_rate(), 2) << "%\n";
  return os.str();
}

std::string report_json(const EvalReport& report) {
  json pairs = json::array();
  for (const auto& p : report.pairs) {
    json entry = {{"instrument", report.instruments[p.instrument]},
                  {"joint", report.joints[p.joint]},
                  {"included", p.included},
                  {"excluded", p.excluded}};
    if (p.defined()) {
      entry["accuracy"] = p.accuracy;
      entry["mean_error"] = *p.mean_error;
    } else {
      entry["accuracy"] = nullptr;
      entry["mean_error"] = nullptr;
    }
    pairs.push_back(std::move(entry));
  }
  json presence = json::object();
  for (std::size_t m = 0; m < report.presence_rates.size(); ++m) {
    presence[report.instruments[m]] = report.presence_rates[m];
  }
  const auto pooled = report.pooled_accuracy(report.summary_radius);
  json j = {{"frames", report.frames},
            {"max_radius", report.max_radius},
            {"summary_radius", report.summary_radius},
            {"presence_threshold", report.presence_threshold},
            {"pairs", std::move(pairs)},
            {"presence_rates", std::move(presence)},
            {"pooled_accuracy", pooled ? json(*pooled) : json(nullptr)},
            {"pooled_presence_rate", report.pooled_presence_rate()}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Plot

Point PlotFrame::to_pixel(double radius, double accuracy) const {
  const double pw = static_cast<double>(width - 2 * margin);
  const double ph = static_cast<double>(height - 2 * margin);
  return {static_cast<double>(margin) + radius / static_cast<double>(max_radius) * pw,
          static_cast<double>(height - margin) - accuracy * ph};
}

double PlotFrame::accuracy_at_row(double row) const {
  return (static_cast<double>(height - margin) - row) / static_cast<double>(height - 2 * margin);
}

Rgb curve_colour(std::size_t index) {
  static const Rgb kPalette[] = {{0.12, 0.47, 0.71}, {1.00, 0.50, 0.05}, {0.17, 0.63, 0.17},
                                 {0.84, 0.15, 0.16}, {0.58, 0.40, 0.74}, {0.55, 0.34, 0.29},
                                 {0.89, 0.47, 0.76}, {0.50, 0.50, 0.50}, {0.74, 0.74, 0.13},
                                 {0.09, 0.75, 0.81}};
  return kPalette[index % std::size(kPalette)];
}

Image plot_curves(const EvalReport& report, const PlotFrame& frame) {
  if (frame.width <= 2 * frame.margin || frame.height <= 2 * frame.margin || frame.max_radius == 0) {
    throw ConfigError("plot: frame too small");
  }
  Image img = Image::blank(frame.width, frame.height, 3, 1.0);
  const Rgb grid{0.88, 0.88, 0.88}, axis{0.0, 0.0, 0.0};
  for (std::size_t r = 0; r <= frame.max_radius; r += 5) {
    draw_line(img, frame.to_pixel(static_cast<double>(r), 0.0), frame.to_pixel(static_cast<double>(r), 1.0), grid);
  }
  for (int k = 0; k <= 10; ++k) {
    const double a = k / 10.0;
    draw_line(img, frame.to_pixel(0.0, a), frame.to_pixel(static_cast<double>(frame.max_radius), a), grid);
  }
  draw_line(img, frame.to_pixel(0.0, 0.0), frame.to_pixel(static_cast<double>(frame.max_radius), 0.0), axis);
  draw_line(img, frame.to_pixel(0.0, 0.0), frame.to_pixel(0.0, 1.0), axis);

  const std::size_t last = std::min(frame.max_radius, report.max_radius);
  std::size_t index = 0;
  for (const auto& p : report.pairs) {
    const Rgb colour = curve_colour(index++);
    if (!p.defined()) continue;
    for (std::size_t r = 0; r < last; ++r) {
      draw_line(img, frame.to_pixel(static_cast<double>(r), p.accuracy[r]),
                frame.to_pixel(static_cast<double>(r + 1), p.accuracy[r + 1]), colour);
    }
    draw_disc(img, frame.to_pixel(0.0, p.accuracy.front()), 2.0, colour);
    draw_disc(img, frame.to_pixel(static_cast<double>(last), p.accuracy[last]), 2.0, colour);
  }
  return img;
}

void emit_report(const EvalReport& report, const std::filesystem::path& directory, bool plot) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw DataError("cannot create '" + directory.string() + "': " + ec.message());
  write_file(directory / "curves.csv", curves_csv(report));
  write_file(directory / "summary.txt", summary_text(report));
  write_file(directory / "report.json", report_json(report));
  if (plot) {
    PlotFrame frame;
    frame.max_radius = report.max_radius;
    write_image(plot_curves(report, frame), directory / "curves.ppm");
  }
}

}  // namespace ipose
