#include "ipose/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "json_util.hpp"

namespace ipose {

namespace {

using detail::json;

struct Segment {
  Point a, b;
  double half_width;
};

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

Point round_point(Point p) { return {std::round(p.x), std::round(p.y)}; }

double segment_distance(Point p, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Key points of one instrument, already rounded to pixels.
struct InstrumentGeometry {
  Point shaft_start, shaft_end, left_tip, right_tip;
};

InstrumentGeometry key_points(const InstrumentStyle& style, const RenderRecord& r) {
  const double s = style.side == Side::kLeft ? 1.0 : -1.0;
  auto dir = [s](double deg) { return Point{s * std::sin(radians(deg)), std::cos(radians(deg))}; };
  const Point d = dir(r.angle);
  const Point end{r.start.x + r.length * d.x, r.start.y + r.length * d.y};
  const Point da = dir(r.angle + r.spread), db = dir(r.angle - r.spread);
  const Point pa = round_point({end.x + r.tip_length * da.x, end.y + r.tip_length * da.y});
  const Point pb = round_point({end.x + r.tip_length * db.x, end.y + r.tip_length * db.y});
  InstrumentGeometry g;
  g.shaft_start = round_point(r.start);
  g.shaft_end = round_point(end);
  g.left_tip = pa.x < pb.x ? pa : pb;
  g.right_tip = pa.x < pb.x ? pb : pa;
  return g;
}

Point joint_of(const InstrumentGeometry& g, const std::string& name) {
  if (name == "left_tip") return g.left_tip;
  if (name == "right_tip") return g.right_tip;
  if (name == "shaft_end") return g.shaft_end;
  return g.shaft_start;
}

json style_to_json(const InstrumentStyle& s) {
  return {{"name", s.name},
          {"side", s.side == Side::kLeft ? "left" : "right"},
          {"presence_probability", s.presence_probability},
          {"min_angle", s.min_angle},
          {"max_angle", s.max_angle},
          {"min_length", s.min_length},
          {"max_length", s.max_length},
          {"min_tip_length", s.min_tip_length},
          {"max_tip_length", s.max_tip_length},
          {"min_spread", s.min_spread},
          {"max_spread", s.max_spread},
          {"thickness", s.thickness},
          {"intensity", s.intensity}};
}

InstrumentStyle style_from_json(const json& j, std::size_t index) {
  detail::FieldReader r(j, "synthetic.instruments[" + std::to_string(index) + "]");
  InstrumentStyle s;
  s.name = r.require<std::string>("name");
  std::string side = "left";
  r.read("side", side);
  if (side != "left" && side != "right") throw ConfigError(r.context() + ".side must be 'left' or 'right'");
  s.side = side == "left" ? Side::kLeft : Side::kRight;
  r.read("presence_probability", s.presence_probability);
  r.read("min_angle", s.min_angle);
  r.read("max_angle", s.max_angle);
  r.read("min_length", s.min_length);
  r.read("max_length", s.max_length);
  r.read("min_tip_length", s.min_tip_length);
  r.read("max_tip_length", s.max_tip_length);
  r.read("min_spread", s.min_spread);
  r.read("max_spread", s.max_spread);
  r.read("thickness", s.thickness);
  r.read("intensity", s.intensity);
  r.finish();
  return s;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (size.width < 8 || size.height < 8) throw ConfigError("synthetic: image must be at least 8x8");
  if (channels != 1 && channels != 3) throw ConfigError("synthetic: channels must be 1 or 3");
  if (instruments.empty()) throw ConfigError("synthetic: at least one instrument is required");
  if (joints.empty()) throw ConfigError("synthetic: at least one joint is required");
  std::set<std::string> names;
  for (const auto& j : joints) {
    if (std::find(kSyntheticJointNames.begin(), kSyntheticJointNames.end(), j) ==
        kSyntheticJointNames.end()) {
      throw ConfigError("synthetic: unknown joint '" + j + "'");
    }
    if (!names.insert(j).second) throw ConfigError("synthetic: duplicate joint '" + j + "'");
  }
  names.clear();
  for (const auto& s : instruments) {
    const std::string where = "synthetic: instrument '" + s.name + "'";
    if (s.name.empty() || !names.insert(s.name).second) {
      throw ConfigError("synthetic: instrument names must be unique and non-empty");
    }
    if (!(s.presence_probability >= 0.0 && s.presence_probability <= 1.0)) {
      throw ConfigError(where + ": presence_probability must lie in [0, 1]");
    }
    if (!(s.min_angle <= s.max_angle && s.min_length <= s.max_length &&
          s.min_tip_length <= s.max_tip_length && s.min_spread <= s.max_spread)) {
      throw ConfigError(where + ": every min_* must not exceed its max_*");
    }
    if (s.min_angle < -60.0 || s.min_spread <= 0.0 || s.max_angle + s.max_spread >= 90.0 ||
        s.min_angle - s.max_spread <= -90.0) {
      throw ConfigError(where + ": prongs must point downward (|angle| + spread < 90)");
    }
    if (s.min_length <= 0.0 || s.min_tip_length <= 0.0 || s.thickness <= 0.0) {
      throw ConfigError(where + ": lengths and thickness must be positive");
    }
    if (!(s.intensity >= 0.0 && s.intensity <= 1.0)) throw ConfigError(where + ": intensity must lie in [0, 1]");
  }
  if (!(background >= 0.0 && background <= 1.0) || background_variation < 0.0 || noise_level < 0.0) {
    throw ConfigError("synthetic: background in [0,1], variation and noise non-negative");
  }
  if (margin < 0.0 || 2.0 * margin >= static_cast<double>(std::min(size.width, size.height))) {
    throw ConfigError("synthetic: margin does not fit the image");
  }
  if (max_retries == 0) throw ConfigError("synthetic: max_retries must be positive");
}

SyntheticSceneSpec default_synthetic_spec(std::size_t num_instruments, std::size_t num_joints,
                                          ImageSize size, std::uint64_t seed) {
  if (num_joints == 0 || num_joints > kSyntheticJointNames.size()) {
    throw ConfigError("synthetic: between 1 and " + std::to_string(kSyntheticJointNames.size()) +
                      " joints are supported");
  }
  SyntheticSceneSpec spec;
  spec.size = size;
  spec.seed = seed;
  spec.joints.assign(kSyntheticJointNames.begin(),
                     kSyntheticJointNames.begin() + static_cast<std::ptrdiff_t>(num_joints));
  const double scale = static_cast<double>(std::min(size.width, size.height)) / 64.0;
  for (std::size_t m = 0; m < num_instruments; ++m) {
    InstrumentStyle s;
    const std::size_t kind = m / 2;
    s.side = m % 2 == 0 ? Side::kLeft : Side::kRight;
    s.name = std::string(s.side == Side::kLeft ? "left" : "right") + "_tool" + std::to_string(kind);
    s.min_length *= scale;
    s.max_length *= scale;
    s.min_tip_length *= scale;
    s.max_tip_length *= scale;
    s.thickness = (2.0 + 1.0 * static_cast<double>(kind % 2)) * scale;
    s.intensity = std::max(0.4, 0.9 - 0.2 * static_cast<double>(kind));
    spec.instruments.push_back(s);
  }
  return spec;
}

std::string synthetic_spec_to_json(const SyntheticSceneSpec& spec) {
  json inst = json::array();
  for (const auto& s : spec.instruments) inst.push_back(style_to_json(s));
  json j = {{"width", spec.size.width},
            {"height", spec.size.height},
            {"channels", spec.channels},
            {"instruments", inst},
            {"joints", spec.joints},
            {"background", spec.background},
            {"background_variation", spec.background_variation},
            {"noise_level", spec.noise_level},
            {"margin", spec.margin},
            {"max_retries", spec.max_retries},
            {"seed", spec.seed},
            {"sequence", spec.sequence}};
  return j.dump(2);
}

SyntheticSceneSpec synthetic_spec_from_json(std::string_view text) {
  const auto j = detail::parse_json(text, "synthetic");
  detail::FieldReader r(j, "synthetic");
  SyntheticSceneSpec spec;
  r.read("width", spec.size.width);
  r.read("height", spec.size.height);
  r.read("channels", spec.channels);
  const auto& inst = r.raw("instruments");
  if (!inst.is_array()) throw ConfigError("synthetic.instruments must be an array");
  for (std::size_t i = 0; i < inst.size(); ++i) spec.instruments.push_back(style_from_json(inst[i], i));
  r.read("joints", spec.joints);
  r.read("background", spec.background);
  r.read("background_variation", spec.background_variation);
  r.read("noise_level", spec.noise_level);
  r.read("margin", spec.margin);
  r.read("max_retries", spec.max_retries);
  r.read("seed", spec.seed);
  r.read("sequence", spec.sequence);
  r.finish();
  spec.validate();
  return spec;
}

SyntheticDataset generate_synthetic(const SyntheticSceneSpec& spec, std::size_t count) {
  spec.validate();
  if (count == 0) throw ConfigError("synthetic: count must be positive");
  const ImageSize size = spec.size;
  const auto w = static_cast<double>(size.width), h = static_cast<double>(size.height);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SyntheticDataset out;
  out.manifest.schema.image_size = size;
  out.manifest.schema.channels = spec.channels;
  out.manifest.schema.joints = spec.joints;
  for (const auto& s : spec.instruments) out.manifest.schema.instruments.push_back(s.name);

  const std::size_t num_inst = spec.instruments.size();
  const char* ext = spec.channels == 1 ? "pgm" : "ppm";
  for (std::size_t i = 0; i < count; ++i) {
    SceneAnnotation ann = SceneAnnotation::empty(size, num_inst, spec.joints.size());
    std::vector<RenderRecord> records(num_inst);
    std::vector<Segment> segments;
    std::vector<std::pair<std::size_t, std::size_t>> segment_owner;  // (first, count) per instrument

    for (std::size_t m = 0; m < num_inst; ++m) {
      const auto& style = spec.instruments[m];
      segment_owner.emplace_back(segments.size(), 0);
      if (unit(rng) >= style.presence_probability) continue;
      bool placed = false;
      for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
        RenderRecord r;
        r.present = true;
        const double sx = uniform(spec.margin, 0.45 * w);
        r.start = {style.side == Side::kLeft ? sx : w - 1.0 - sx, uniform(spec.margin, spec.margin + 0.2 * h)};
        r.angle = uniform(style.min_angle, style.max_angle);
        r.length = uniform(style.min_length, style.max_length);
        r.tip_length = uniform(style.min_tip_length, style.max_tip_length);
        r.spread = uniform(style.min_spread, style.max_spread);
        const auto g = key_points(style, r);
        bool inside = g.left_tip.x != g.right_tip.x;
        for (const Point& p : {g.shaft_start, g.shaft_end, g.left_tip, g.right_tip}) {
          inside = inside && p.x >= spec.margin && p.y >= spec.margin &&
                   p.x <= w - 1.0 - spec.margin && p.y <= h - 1.0 - spec.margin;
        }
        if (!inside) continue;
        placed = true;
        records[m] = r;
        ann.presence[m] = true;
        for (std::size_t n = 0; n < spec.joints.size(); ++n) ann.joints[m][n] = joint_of(g, spec.joints[n]);
        const double hw = style.thickness / 2.0;
        segments.push_back({g.shaft_start, g.shaft_end, hw});
        segments.push_back({g.shaft_end, g.left_tip, 0.75 * hw});
        segments.push_back({g.shaft_end, g.right_tip, 0.75 * hw});
        segment_owner.back().second = 3;
      }
      if (!placed) {
        throw ConfigError("synthetic: could not place instrument '" + style.name + "' within " +
                          std::to_string(spec.max_retries) + " attempts; loosen the geometry");
      }
    }

    Image img = Image::blank(size.width, size.height, spec.channels);
    const double ramp_x = uniform(-1.0, 1.0) * spec.background_variation;
    const double ramp_y = uniform(-1.0, 1.0) * spec.background_variation;
    for (std::size_t y = 0; y < size.height; ++y) {
      for (std::size_t x = 0; x < size.width; ++x) {
        const Point p{static_cast<double>(x), static_cast<double>(y)};
        double v = spec.background + ramp_x * (p.x / w - 0.5) + ramp_y * (p.y / h - 0.5);
        for (std::size_t m = 0; m < num_inst; ++m) {
          const auto [first, n_seg] = segment_owner[m];
          double cover = 0.0;
          for (std::size_t k = first; k < first + n_seg; ++k) {
            const auto& s = segments[k];
            cover = std::max(cover, std::clamp(s.half_width + 0.5 - segment_distance(p, s.a, s.b), 0.0, 1.0));
          }
          v = v * (1.0 - cover) + spec.instruments[m].intensity * cover;
        }
        for (std::size_t c = 0; c < spec.channels; ++c) img.at(c, y, x) = v;
      }
    }
    if (spec.noise_level > 0.0) {
      for (auto& v : img.pixels) v += spec.noise_level * noise(rng);
    }
    quantize_8bit(img);

    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.%s", i, ext);
    out.manifest.entries.push_back({name, spec.sequence, std::move(ann)});
    out.images.push_back(std::move(img));
    out.renders.push_back(std::move(records));
  }
  return out;
}

void write_synthetic(const SyntheticDataset& dataset, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory / "images");
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    write_image(dataset.images[i], directory / dataset.manifest.entries[i].image);
  }
  DatasetManifest manifest = dataset.manifest;
  manifest.root = directory;
  save_manifest(manifest, directory / kManifestFileName);

  json log = json::array();
  for (std::size_t i = 0; i < dataset.renders.size(); ++i) {
    json per = json::array();
    for (const auto& r : dataset.renders[i]) {
      if (!r.present) {
        per.push_back(nullptr);
        continue;
      }
      per.push_back({{"start", {r.start.x, r.start.y}},
                     {"angle", r.angle},
                     {"length", r.length},
                     {"tip_length", r.tip_length},
                     {"spread", r.spread}});
    }
    log.push_back({{"image", dataset.manifest.entries[i].image}, {"instruments", per}});
  }
  std::ofstream out(directory / "render_log.json", std::ios::trunc);
  if (!out) throw DataError("cannot write render log under '" + directory.string() + "'");
  out << log.dump(1) << '\n';
}

std::vector<Sample> synthetic_samples(const SyntheticDataset& dataset) {
  std::vector<Sample> out;
  out.reserve(dataset.images.size());
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    out.push_back({dataset.images[i], dataset.manifest.entries[i].annotation});
  }
  return out;
}

}  // namespace ipose
