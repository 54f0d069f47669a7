#include "ipose/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json_util.hpp"

namespace ipose {

namespace {

using detail::json;

constexpr std::size_t kMaxListedProblems = 50;

std::string join_problems(const std::vector<std::string>& problems) {
  std::ostringstream os;
  os << problems.size() << " dataset problem(s):";
  for (std::size_t i = 0; i < problems.size() && i < kMaxListedProblems; ++i) {
    os << "\n  - " << problems[i];
  }
  if (problems.size() > kMaxListedProblems) os << "\n  ...";
  return os.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

DatasetSchema parse_schema(const json& j) {
  detail::FieldReader r(j, "manifest.schema");
  DatasetSchema s;
  s.instruments = r.require<std::vector<std::string>>("instruments");
  s.joints = r.require<std::vector<std::string>>("joints");
  s.image_size.width = r.require<std::size_t>("width");
  s.image_size.height = r.require<std::size_t>("height");
  r.read("channels", s.channels);
  r.finish();
  if (s.instruments.empty() || s.joints.empty()) {
    throw DataError("manifest.schema: instrument and joint lists must be non-empty");
  }
  if (std::set<std::string>(s.instruments.begin(), s.instruments.end()).size() != s.instruments.size() ||
      std::set<std::string>(s.joints.begin(), s.joints.end()).size() != s.joints.size()) {
    throw DataError("manifest.schema: duplicate instrument or joint names");
  }
  if (s.image_size.width == 0 || s.image_size.height == 0) throw DataError("manifest.schema: empty image size");
  if (s.channels != 1 && s.channels != 3) throw DataError("manifest.schema: channels must be 1 or 3");
  return s;
}

// Returns an error message or an empty string.
std::string parse_entry(const json& j, const DatasetSchema& schema, ManifestEntry& entry) {
  if (!j.is_object()) return "entry is not an object";
  for (const auto& [key, value] : j.items()) {
    if (key != "image" && key != "sequence" && key != "instruments") return "unknown key '" + key + "'";
  }
  if (!j.contains("image") || !j["image"].is_string()) return "missing image path";
  entry.image = j["image"].get<std::string>();
  if (j.contains("sequence")) {
    if (!j["sequence"].is_string()) return "sequence must be a string";
    entry.sequence = j["sequence"].get<std::string>();
  }
  const std::size_t m_count = schema.instruments.size();
  const std::size_t n_count = schema.joints.size();
  entry.annotation = SceneAnnotation::empty(schema.image_size, m_count, n_count);
  if (!j.contains("instruments")) return {};
  const auto& inst = j["instruments"];
  if (!inst.is_object()) return "instruments must be an object";
  for (const auto& [name, joints] : inst.items()) {
    const auto mit = std::find(schema.instruments.begin(), schema.instruments.end(), name);
    if (mit == schema.instruments.end()) return "unknown instrument '" + name + "'";
    const auto m = static_cast<std::size_t>(mit - schema.instruments.begin());
    if (!joints.is_object()) return "joints of '" + name + "' must be an object";
    for (const auto& [jname, xy] : joints.items()) {
      const auto nit = std::find(schema.joints.begin(), schema.joints.end(), jname);
      if (nit == schema.joints.end()) return "unknown joint '" + jname + "' on '" + name + "'";
      if (!xy.is_array() || xy.size() != 2 || !xy[0].is_number() || !xy[1].is_number()) {
        return "joint '" + jname + "' of '" + name + "' must be [x, y]";
      }
      const auto n = static_cast<std::size_t>(nit - schema.joints.begin());
      entry.annotation.joints[m][n] = Point{xy[0].get<double>(), xy[1].get<double>()};
    }
    const auto annotated = static_cast<std::size_t>(
        std::count_if(entry.annotation.joints[m].begin(), entry.annotation.joints[m].end(),
                      [](const auto& p) { return p.has_value(); }));
    if (annotated == n_count) {
      entry.annotation.presence[m] = true;
    } else if (annotated != 0) {
      return "instrument '" + name + "' is partially annotated (" + std::to_string(annotated) +
             " of " + std::to_string(n_count) + " joints)";
    }
  }
  try {
    entry.annotation.validate();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

DatasetError::DatasetError(std::vector<std::string> problems)
    : DataError(join_problems(problems)), problems_(std::move(problems)) {}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest manifest;
  manifest.root = root;
  try {
    detail::FieldReader r(j, "manifest");
    const auto format = r.require<std::string>("format");
    if (format != kManifestFormat) throw DataError("manifest: unexpected format '" + format + "'");
    const auto version = r.require<int>("version");
    if (version != kManifestVersion) {
      throw DataError("manifest: version " + std::to_string(version) + " is not supported");
    }
    manifest.schema = parse_schema(r.raw("schema"));
    const auto& entries = r.raw("entries");
    r.finish();
    if (!entries.is_array()) throw DataError("manifest.entries must be an array");

    std::vector<std::string> problems;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ManifestEntry entry;
      const auto problem = parse_entry(entries[i], manifest.schema, entry);
      if (!problem.empty()) {
        problems.push_back("entry " + std::to_string(i) +
                           (entry.image.empty() ? "" : " (" + entry.image + ")") + ": " + problem);
        continue;
      }
      manifest.entries.push_back(std::move(entry));
    }
    if (!problems.empty()) throw DatasetError(std::move(problems));
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto file = path;
  if (std::filesystem::is_directory(file)) file /= kManifestFileName;
  return parse_manifest(read_text(file), file.parent_path());
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  const auto& s = manifest.schema;
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json inst = json::object();
    for (std::size_t m = 0; m < s.instruments.size(); ++m) {
      if (!e.annotation.presence[m]) continue;
      json joints = json::object();
      for (std::size_t n = 0; n < s.joints.size(); ++n) {
        const auto& p = *e.annotation.joints[m][n];
        joints[s.joints[n]] = {p.x, p.y};
      }
      inst[s.instruments[m]] = std::move(joints);
    }
    entries.push_back({{"image", e.image}, {"sequence", e.sequence}, {"instruments", std::move(inst)}});
  }
  json j = {
      {"format", kManifestFormat},
      {"version", kManifestVersion},
      {"schema",
       {{"instruments", s.instruments},
        {"joints", s.joints},
        {"width", s.image_size.width},
        {"height", s.image_size.height},
        {"channels", s.channels}}},
      {"entries", std::move(entries)},
  };
  return j.dump(1);
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file) {
  DatasetManifest copy = manifest;
  const auto dir = std::filesystem::absolute(file).parent_path();
  for (auto& e : copy.entries) {
    const auto abs = std::filesystem::absolute(manifest.image_path(e)).lexically_normal();
    e.image = abs.lexically_relative(dir).generic_string();
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + file.string() + "' for writing");
  out << manifest_to_json(copy) << '\n';
  if (!out) throw DataError("failed writing manifest '" + file.string() + "'");
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  const SplitPolicy& policy) {
  DatasetManifest train, test;
  train.schema = test.schema = manifest.schema;
  train.root = test.root = manifest.root;

  if (policy.kind == SplitPolicy::Kind::kFirstFraction) {
    if (!(policy.fraction > 0.0 && policy.fraction < 1.0)) {
      throw ConfigError("split: fraction must lie in (0, 1)");
    }
    std::map<std::string, std::size_t> totals, seen;
    for (const auto& e : manifest.entries) ++totals[e.sequence];
    for (const auto& e : manifest.entries) {
      const auto cut = static_cast<std::size_t>(
          static_cast<double>(totals[e.sequence]) * policy.fraction + 1e-9);
      (seen[e.sequence]++ < cut ? train : test).entries.push_back(e);
    }
  } else {
    const std::set<std::string> tr(policy.train_sequences.begin(), policy.train_sequences.end());
    const std::set<std::string> te(policy.test_sequences.begin(), policy.test_sequences.end());
    std::set<std::string> known;
    for (const auto& e : manifest.entries) known.insert(e.sequence);
    for (const auto& s : tr) {
      if (te.count(s)) throw ConfigError("split: sequence '" + s + "' is listed on both sides");
    }
    for (const auto* side : {&tr, &te}) {
      for (const auto& s : *side) {
        if (!known.count(s)) throw ConfigError("split: unknown sequence '" + s + "'");
      }
    }
    for (const auto& e : manifest.entries) {
      if (tr.count(e.sequence)) train.entries.push_back(e);
      else if (te.count(e.sequence)) test.entries.push_back(e);
    }
  }
  if (train.entries.empty() || test.entries.empty()) {
    throw ConfigError("split: the " + std::string(train.entries.empty() ? "training" : "test") +
                      " side is empty");
  }
  return {std::move(train), std::move(test)};
}

Sample resize_sample(const Sample& sample, ImageSize size) {
  Sample out;
  out.image = resize_bilinear(sample.image, size);
  out.annotation = sample.annotation;
  out.annotation.size = size;
  const ImageSize from = sample.image.size();
  for (auto& joints : out.annotation.joints) {
    for (auto& j : joints) {
      if (!j) continue;
      Point p = scale_point(*j, from, size);
      p.x = std::clamp(p.x, 0.0, static_cast<double>(size.width - 1));
      p.y = std::clamp(p.y, 0.0, static_cast<double>(size.height - 1));
      *j = p;
    }
  }
  return out;
}

Sample load_sample(const DatasetManifest& manifest, std::size_t index,
                   std::optional<ImageSize> resize) {
  const auto& entry = manifest.entries.at(index);
  Sample s;
  s.image = read_image(manifest.image_path(entry));
  if (s.image.size() != manifest.schema.image_size) {
    throw DataError("image '" + entry.image + "' is " + std::to_string(s.image.width) + "x" +
                    std::to_string(s.image.height) + ", manifest declares " +
                    std::to_string(manifest.schema.image_size.width) + "x" +
                    std::to_string(manifest.schema.image_size.height));
  }
  if (s.image.channels != manifest.schema.channels) {
    s.image = convert_channels(s.image, manifest.schema.channels);
  }
  s.annotation = entry.annotation;
  if (resize && *resize != s.image.size()) return resize_sample(s, *resize);
  return s;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::optional<ImageSize> resize) {
  std::vector<Sample> samples;
  std::vector<std::string> problems;
  samples.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    try {
      samples.push_back(load_sample(manifest, i, resize));
    } catch (const DataError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) throw DatasetError(std::move(problems));
  return samples;
}

}  // namespace ipose
