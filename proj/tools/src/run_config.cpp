#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ipose/cli.hpp"
#include "ipose/error.hpp"

namespace ipose::cli {

namespace {

using json = nlohmann::json;

const std::set<std::string> kTopKeys{"network", "training", "data", "evaluation", "output_dir"};

void reject_unknown(const json& object, const std::set<std::string>& allowed, const std::string& where) {
  if (!object.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : object.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get(const json& object, const char* key, const std::string& where, T fallback) {
  if (!object.contains(key)) return fallback;
  try {
    return object.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

SplitPolicy parse_split(const json& j) {
  reject_unknown(j, {"kind", "fraction", "train", "test"}, "data.split");
  SplitPolicy s;
  const auto kind = get<std::string>(j, "kind", "data.split", "first_fraction");
  if (kind == "first_fraction") {
    s.kind = SplitPolicy::Kind::kFirstFraction;
    s.fraction = get<double>(j, "fraction", "data.split", 0.8);
    if (!(s.fraction > 0.0 && s.fraction < 1.0)) throw ConfigError("data.split.fraction must lie in (0, 1)");
    if (j.contains("train") || j.contains("test")) {
      throw ConfigError("data.split: sequence lists require kind \"explicit\"");
    }
  } else if (kind == "explicit") {
    s.kind = SplitPolicy::Kind::kExplicit;
    s.train_sequences = get<std::vector<std::string>>(j, "train", "data.split", {});
    s.test_sequences = get<std::vector<std::string>>(j, "test", "data.split", {});
    if (s.train_sequences.empty()) throw ConfigError("data.split.train must list at least one sequence");
  } else {
    throw ConfigError("data.split.kind must be \"first_fraction\" or \"explicit\"");
  }
  return s;
}

json split_to_json(const SplitPolicy& s) {
  if (s.kind == SplitPolicy::Kind::kFirstFraction) return {{"kind", "first_fraction"}, {"fraction", s.fraction}};
  return {{"kind", "explicit"}, {"train", s.train_sequences}, {"test", s.test_sequences}};
}

json parse_text(std::string_view text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(where + ": invalid JSON: " + e.what());
  }
}

std::string read_text(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + file.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TrainConfig RunConfig::training(const DatasetSchema& schema) const {
  return train_config_from_json(training_json, schema.instruments, schema.joints);
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  const json j = parse_text(text, "run config");
  reject_unknown(j, kTopKeys, "run config");
  RunConfig c;

  if (!j.contains("network")) throw ConfigError("run config: missing required section 'network'");
  c.network = network_config_from_json(j.at("network").dump());
  c.network.validate();

  if (j.contains("training")) {
    if (!j.at("training").is_object()) throw ConfigError("training: expected an object");
    c.training_json = j.at("training").dump();
  }
  // Names are not known yet; parsing with placeholders still catches every
  // type, range and unknown-key error before anything is loaded.
  {
    std::vector<std::string> inst, joints;
    for (std::size_t m = 0; m < c.network.num_instruments; ++m) inst.push_back("instrument" + std::to_string(m));
    for (std::size_t n = 0; n < c.network.num_joints; ++n) joints.push_back("joint" + std::to_string(n));
    const json t = parse_text(c.training_json, "training");
    if (!t.contains("hflip_permutation") && !t.contains("vflip_permutation")) {
      train_config_from_json(c.training_json, inst, joints).validate();
    }
  }

  if (!j.contains("data")) throw ConfigError("run config: missing required section 'data'");
  const json& d = j.at("data");
  reject_unknown(d, {"manifest", "split", "resize"}, "data");
  if (!d.contains("manifest")) throw ConfigError("data: missing required key 'manifest'");
  c.data.manifest = resolve(base_dir, get<std::string>(d, "manifest", "data", ""));
  if (d.contains("split")) c.data.split = parse_split(d.at("split"));
  c.data.resize = get<bool>(d, "resize", "data", false);

  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    reject_unknown(e, {"max_radius", "presence_threshold", "summary_radius", "plot"}, "evaluation");
    c.evaluation.options.max_radius = get<std::size_t>(e, "max_radius", "evaluation", 40);
    c.evaluation.options.presence_threshold = get<double>(e, "presence_threshold", "evaluation", kDefaultPresenceThreshold);
    c.evaluation.options.summary_radius = get<std::size_t>(e, "summary_radius", "evaluation", 15);
    c.evaluation.plot = get<bool>(e, "plot", "evaluation", false);
  }
  const auto& eo = c.evaluation.options;
  if (eo.max_radius == 0) throw ConfigError("evaluation.max_radius must be positive");
  if (eo.summary_radius > eo.max_radius) throw ConfigError("evaluation.summary_radius exceeds max_radius");
  if (!(eo.presence_threshold >= 0.0 && eo.presence_threshold <= 1.0)) {
    throw ConfigError("evaluation.presence_threshold must lie in [0, 1]");
  }

  if (!j.contains("output_dir")) throw ConfigError("run config: missing required key 'output_dir'");
  c.output_dir = resolve(base_dir, get<std::string>(j, "output_dir", "run config", ""));
  if (c.output_dir.empty()) throw ConfigError("run config: output_dir must not be empty");
  return c;
}

std::string run_config_to_json(const RunConfig& c, const DatasetSchema& schema) {
  const TrainConfig t = c.training(schema);
  json j;
  j["network"] = json::parse(network_config_to_json(c.network));
  j["training"] = json::parse(train_config_to_json(t, schema.instruments, schema.joints));
  j["data"] = {{"manifest", std::filesystem::absolute(c.data.manifest).string()},
               {"split", split_to_json(c.data.split)},
               {"resize", c.data.resize}};
  j["evaluation"] = {{"max_radius", c.evaluation.options.max_radius},
                     {"presence_threshold", c.evaluation.options.presence_threshold},
                     {"summary_radius", c.evaluation.options.summary_radius},
                     {"plot", c.evaluation.plot}};
  j["output_dir"] = std::filesystem::absolute(c.output_dir).string();
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& file, std::optional<std::uint64_t> seed,
                          std::optional<std::filesystem::path> output_dir) {
  json j = parse_text(read_text(file), file.string());
  if (!j.is_object()) throw ConfigError(file.string() + ": expected an object");
  if (seed) {
    if (!j.contains("training")) j["training"] = json::object();
    if (!j["training"].is_object()) throw ConfigError("training: expected an object");
    j["training"]["seed"] = *seed;
  }
  if (output_dir) j["output_dir"] = std::filesystem::absolute(*output_dir).string();
  const auto base = std::filesystem::absolute(file).parent_path();
  return parse_run_config(j.dump(), base);
}

void check_compatible(const NetworkConfig& n, const DatasetSchema& s, bool resize) {
  std::vector<std::string> problems;
  if (n.num_instruments != s.instruments.size()) {
    problems.push_back("network expects " + std::to_string(n.num_instruments) + " instruments, dataset has " +
                       std::to_string(s.instruments.size()));
  }
  if (n.num_joints != s.joints.size()) {
    problems.push_back("network expects " + std::to_string(n.num_joints) + " joints, dataset has " +
                       std::to_string(s.joints.size()));
  }
  if (n.input_channels != s.channels) {
    problems.push_back("network expects " + std::to_string(n.input_channels) + " channels, dataset has " +
                       std::to_string(s.channels));
  }
  if (!resize && n.input_size != s.image_size) {
    problems.push_back("network input is " + std::to_string(n.input_size.width) + "x" +
                       std::to_string(n.input_size.height) + ", dataset images are " +
                       std::to_string(s.image_size.width) + "x" + std::to_string(s.image_size.height) +
                       " (enable resizing to resample)");
  }
  if (problems.empty()) return;
  std::string msg = "network and dataset are incompatible:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

}  // namespace ipose::cli
