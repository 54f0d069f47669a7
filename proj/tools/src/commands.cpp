#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "ipose/cli.hpp"
#include "ipose/error.hpp"
#include "ipose/image.hpp"
#include "ipose/synthetic.hpp"

namespace ipose::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kModelFile = "model.ckpt";
constexpr const char* kLatestFile = "latest.ckpt";

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void ensure_writable_dir(const fs::path& dir) {
  if (fs::exists(dir) && !fs::is_directory(dir)) {
    throw ConfigError("output path '" + dir.string() + "' exists and is not a directory");
  }
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write '" + file.string() + "'");
}

// Writes through a temporary so an interrupted save never leaves a torn file.
void save_atomically(const Checkpoint& c, const fs::path& file) {
  const fs::path tmp = file.string() + ".tmp";
  save_checkpoint(c, tmp);
  fs::rename(tmp, file);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// Checkpoints written by `train` carry the dataset's names; older or
// hand-made ones fall back to positional names.
std::pair<std::vector<std::string>, std::vector<std::string>> names_of(const Checkpoint& c,
                                                                         const NetworkConfig& n) {
  std::vector<std::string> inst, joints;
  try {
    const auto meta = json::parse(c.metadata_json);
    if (meta.contains("instruments")) inst = meta.at("instruments").get<std::vector<std::string>>();
    if (meta.contains("joints")) joints = meta.at("joints").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    inst.clear();
    joints.clear();
  }
  if (inst.size() != n.num_instruments) {
    inst.clear();
    for (std::size_t m = 0; m < n.num_instruments; ++m) inst.push_back("instrument" + std::to_string(m));
  }
  if (joints.size() != n.num_joints) {
    joints.clear();
    for (std::size_t k = 0; k < n.num_joints; ++k) joints.push_back("joint" + std::to_string(k));
  }
  return {inst, joints};
}

Checkpoint named_checkpoint(const DetectorNet& model, const TrainState& state, std::uint64_t seed,
                            const DatasetSchema& schema) {
  Checkpoint c = make_checkpoint(model, state, seed);
  auto meta = json::parse(c.metadata_json);
  meta["instruments"] = schema.instruments;
  meta["joints"] = schema.joints;
  c.metadata_json = meta.dump();
  return c;
}

std::string loss_row(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g\n", r.step, r.epoch, r.loss, r.presence, r.maps);
  return buf;
}

constexpr const char* kLossHeader = "step,epoch,loss,presence,maps\n";

// Keeps the rows of an earlier run up to `steps` so a resumed log reads as
// one continuous run.
std::string truncated_loss_log(const fs::path& file, std::size_t steps) {
  std::string kept = kLossHeader;
  std::ifstream in(file);
  std::string line;
  if (!std::getline(in, line)) return kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto step = std::stoull(line.substr(0, line.find(',')));
    if (step <= steps) kept += line + "\n";
  }
  return kept;
}

Checkpoint load_checked_checkpoint(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("checkpoint '" + path.string() + "' does not exist");
  return load_checkpoint(path);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::size_t count = 0;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticSceneSpec spec = default_synthetic_spec(2, 3);
  if (!a.config.empty()) {
    std::ifstream in(a.config, std::ios::binary);
    if (!in) throw ConfigError("cannot read spec file '" + a.config + "'");
    std::ostringstream os;
    os << in.rdbuf();
    spec = synthetic_spec_from_json(os.str());
  }
  if (a.seed) spec.seed = *a.seed;
  if (a.count == 0) throw ConfigError("synth: --count must be positive");
  spec.validate();
  const fs::path dir(a.out);
  ensure_writable_dir(dir);

  const auto ds = generate_synthetic(spec, a.count);
  write_synthetic(ds, dir);
  write_text(dir / "spec.json", synthetic_spec_to_json(spec) + "\n");

  out << "wrote " << a.count << " images to " << dir.string() << " (seed " << spec.seed << ")\n";
  for (std::size_t m = 0; m < spec.instruments.size(); ++m) {
    std::size_t present = 0;
    for (const auto& e : ds.manifest.entries) present += e.annotation.presence[m] ? 1 : 0;
    out << "  " << spec.instruments[m].name << ": " << present << "/" << a.count << " present ("
        << fixed(100.0 * static_cast<double>(present) / static_cast<double>(a.count), 1) << "%)\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string resume;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = load_run_config(a.config, a.seed,
                                       a.out.empty() ? std::nullopt : std::optional<fs::path>(a.out));
  const DatasetManifest manifest = load_manifest(rc.data.manifest);
  check_compatible(rc.network, manifest.schema, rc.data.resize);
  const TrainConfig tc = rc.training(manifest.schema);
  tc.validate();

  DetectorNet model = DetectorNet::build(rc.network, tc.seed);
  TrainState start;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checked_checkpoint(a.resume);
    model = DetectorNet::from_checkpoint(ck);
    if (!(model.config() == rc.network)) {
      throw ConfigError("checkpoint '" + a.resume + "' was trained with a different network config");
    }
    start = restore_train_state(ck, model);
    if (start.epochs_done > tc.epochs) {
      throw ConfigError("checkpoint has " + std::to_string(start.epochs_done) + " epochs, config asks for " +
                        std::to_string(tc.epochs));
    }
  }

  ensure_writable_dir(rc.output_dir);
  if (a.resume.empty() && non_empty_dir(rc.output_dir)) {
    throw ConfigError("output directory '" + rc.output_dir.string() + "' is not empty");
  }
  const auto [train_set, test_set] = split(manifest, rc.data.split);
  if (train_set.size() == 0) throw DataError("training split is empty");
  const std::optional<ImageSize> resize =
      rc.data.resize ? std::optional<ImageSize>(rc.network.input_size) : std::nullopt;
  const auto samples = load_samples(train_set, resize);
  check_dataset(model, samples);

  // Everything is validated; from here on the run directory is written.
  const fs::path dir = rc.output_dir;
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "split");
  write_text(dir / "config.json", run_config_to_json(rc, manifest.schema));
  save_manifest(train_set, dir / "split" / "train.json");
  save_manifest(test_set, dir / "split" / "test.json");

  const fs::path loss_file = dir / "loss.csv";
  write_text(loss_file, a.resume.empty() ? std::string(kLossHeader) : truncated_loss_log(loss_file, start.steps_done));
  std::ofstream loss_log(loss_file, std::ios::app);

  out << "training " << samples.size() << " images, " << model.parameter_count() << " parameters, epochs "
      << start.epochs_done + 1 << ".." << tc.epochs << ", seed " << tc.seed << "\n";

  double epoch_sum = 0, epoch_pres = 0, epoch_maps = 0;
  std::size_t epoch_steps = 0;
  TrainCallbacks cb;
  cb.on_step = [&](const LossRecord& r) {
    loss_log << loss_row(r);
    loss_log.flush();
    epoch_sum += r.loss;
    epoch_pres += r.presence;
    epoch_maps += r.maps;
    ++epoch_steps;
  };
  cb.on_epoch_end = [&](std::size_t epoch, const DetectorNet& m, const TrainState& st) {
    const double k = static_cast<double>(epoch_steps);
    out << "epoch " << epoch + 1 << "/" << tc.epochs << " mean_loss=" << fixed(epoch_sum / k, 6)
        << " presence=" << fixed(epoch_pres / k, 6) << " maps=" << fixed(epoch_maps / k, 6)
        << " steps=" << st.steps_done << std::endl;
    epoch_sum = epoch_pres = epoch_maps = 0;
    epoch_steps = 0;
    save_atomically(named_checkpoint(m, st, tc.seed, manifest.schema), dir / "checkpoints" / kLatestFile);
  };

  TrainResult result;
  try {
    result = train(model, samples, tc, start, cb);
  } catch (const NumericError& e) {
    loss_log.flush();
    throw NumericError(std::string(e.what()) + " (loss log kept at " + loss_file.string() +
                       "; try a lower learning rate)");
  }
  const Checkpoint final_ck = named_checkpoint(model, result.state, tc.seed, manifest.schema);
  save_atomically(final_ck, dir / kModelFile);
  out << "saved " << (dir / kModelFile).string() << " digest " << hex64(fnv1a64(serialize_checkpoint(final_ck)))
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string config;
  std::string out;
  std::optional<std::size_t> max_radius;
  std::optional<double> presence_threshold;
  bool plot = false;
  bool resize = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  EvalConfig ec;
  fs::path manifest_path, out_dir;
  bool resize = a.resize;
  bool use_test_split = false;
  SplitPolicy policy;
  if (!a.config.empty()) {
    const RunConfig rc = load_run_config(a.config);
    ec = rc.evaluation;
    manifest_path = rc.data.manifest;
    resize = resize || rc.data.resize;
    out_dir = rc.output_dir / "eval";
    use_test_split = true;
    policy = rc.data.split;
  }
  if (!a.manifest.empty()) {
    manifest_path = a.manifest;
    use_test_split = false;
  }
  if (!a.out.empty()) out_dir = a.out;
  if (manifest_path.empty()) throw ConfigError("eval: give --manifest or --config");
  if (out_dir.empty()) throw ConfigError("eval: give --out or --config");
  if (a.max_radius) ec.options.max_radius = *a.max_radius;
  if (a.presence_threshold) ec.options.presence_threshold = *a.presence_threshold;
  ec.plot = ec.plot || a.plot;
  if (ec.options.max_radius == 0) throw ConfigError("eval: --max-radius must be positive");
  if (ec.options.summary_radius > ec.options.max_radius) ec.options.summary_radius = ec.options.max_radius;
  if (!(ec.options.presence_threshold >= 0.0 && ec.options.presence_threshold <= 1.0)) {
    throw ConfigError("eval: --presence-threshold must lie in [0, 1]");
  }
  ensure_writable_dir(out_dir);

  const Checkpoint ck = load_checked_checkpoint(a.checkpoint);
  const DetectorNet model = DetectorNet::from_checkpoint(ck);
  DatasetManifest manifest = load_manifest(manifest_path);
  if (use_test_split) manifest = split(manifest, policy).second;
  if (manifest.size() == 0) throw DataError("eval: manifest has no frames");
  check_compatible(model.config(), manifest.schema, resize);

  const std::optional<ImageSize> size = resize ? std::optional<ImageSize>(model.config().input_size) : std::nullopt;
  const auto samples = load_samples(manifest, size);
  const auto predictions = predict_frames(model, samples, ec.options.presence_threshold);
  std::vector<SceneAnnotation> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.annotation);
  const auto report = evaluate(predictions, truth, manifest.schema.instruments, manifest.schema.joints, ec.options);
  emit_report(report, out_dir, ec.plot);
  out << summary_text(report);
  out << "report written to " << out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string overlay;
  bool resize = false;
  double presence_threshold = kDefaultPresenceThreshold;
};

const std::array<Rgb, 6> kMarkerColours{{{0.0, 1.0, 0.0},
                                         {1.0, 0.2, 0.2},
                                         {0.2, 0.5, 1.0},
                                         {1.0, 0.9, 0.0},
                                         {1.0, 0.0, 1.0},
                                         {0.0, 1.0, 1.0}}};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (!(a.presence_threshold >= 0.0 && a.presence_threshold <= 1.0)) {
    throw ConfigError("infer: --presence-threshold must lie in [0, 1]");
  }
  if (!a.overlay.empty()) ensure_writable_dir(fs::path(a.overlay).parent_path().empty() ? fs::path(".")
                                                                                      : fs::path(a.overlay).parent_path());
  const Checkpoint ck = load_checked_checkpoint(a.checkpoint);
  const DetectorNet model = DetectorNet::from_checkpoint(ck);
  const auto& cfg = model.config();
  const Image original = read_image(a.image);
  if (original.channels != cfg.input_channels) {
    throw ConfigError("image has " + std::to_string(original.channels) + " channels, network expects " +
                      std::to_string(cfg.input_channels));
  }
  if (original.size() != cfg.input_size && !a.resize) {
    throw ConfigError("image is " + std::to_string(original.width) + "x" + std::to_string(original.height) +
                      ", network expects " + std::to_string(cfg.input_size.width) + "x" +
                      std::to_string(cfg.input_size.height) + " (pass --resize to resample)");
  }
  const Image input = original.size() == cfg.input_size ? original : resize_bilinear(original, cfg.input_size);
  std::vector<std::vector<double>> batch{input.pixels};
  const auto result = model.predict(stack_images(batch, cfg.input_channels, cfg.input_size));
  const auto scene = split_outputs(result.presence, result.maps, cfg.num_joints).front();
  const auto estimates = extract_joints(scene, a.presence_threshold);
  const auto [inst, joints] = names_of(ck, cfg);

  Image overlay = convert_channels(original, 3);
  out << "image " << a.image << " " << original.width << "x" << original.height << "\n";
  for (const auto& e : estimates) {
    out << inst[e.instrument] << " presence=" << fixed(e.probability, 6) << " present=" << (e.present ? "yes" : "no")
        << "\n";
    for (std::size_t n = 0; n < e.joints.size(); ++n) {
      const Point p = scale_point({static_cast<double>(e.joints[n].x), static_cast<double>(e.joints[n].y)},
                                  cfg.input_size, original.size());
      out << "  " << joints[n] << " x=" << fixed(p.x, 2) << " y=" << fixed(p.y, 2) << "\n";
      if (e.present) draw_disc(overlay, p, 2.0, kMarkerColours[e.instrument % kMarkerColours.size()]);
    }
  }
  if (!a.overlay.empty()) {
    const fs::path file(a.overlay);
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    write_image(overlay, file);
    out << "overlay written to " << file.string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instrument detection and joint localisation"};
  app.name("ipose");
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render a synthetic annotated dataset");
  synth->add_option("--config", sa.config, "Synthetic scene spec (JSON); defaults to two claspers, three joints");
  synth->add_option("--count", sa.count, "Number of images")->required();
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Overrides the spec seed");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a detector from a run config");
  trn->add_option("--config", ta.config, "Run config (JSON)")->required();
  trn->add_option("--seed", ta.seed, "Overrides training.seed");
  trn->add_option("--out", ta.out, "Overrides output_dir");
  trn->add_option("--resume", ta.resume, "Continue from a checkpoint written by an earlier run");

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Score a checkpoint on an annotated dataset");
  evl->add_option("--checkpoint", ea.checkpoint, "Model checkpoint")->required();
  evl->add_option("--manifest", ea.manifest, "Dataset manifest (all frames are scored)");
  evl->add_option("--config", ea.config, "Run config; scores its test split");
  evl->add_option("--out", ea.out, "Report directory");
  evl->add_option("--max-radius", ea.max_radius, "Largest curve radius in pixels");
  evl->add_option("--presence-threshold", ea.presence_threshold, "Presence decision threshold");
  evl->add_flag("--plot", ea.plot, "Also render curves.ppm");
  evl->add_flag("--resize", ea.resize, "Resample images to the network input size");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Detect instruments in one image");
  inf->add_option("--checkpoint", ia.checkpoint, "Model checkpoint")->required();
  inf->add_option("--image", ia.image, "PGM or PPM image")->required();
  inf->add_option("--overlay", ia.overlay, "Write a PPM with predicted joints marked");
  inf->add_option("--presence-threshold", ia.presence_threshold, "Presence decision threshold");
  inf->add_flag("--resize", ia.resize, "Resample the image to the network input size");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*trn) return cmd_train(ta, out);
    if (*evl) return cmd_eval(ea, out);
    if (*inf) return cmd_infer(ia, out);
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace ipose::cli
