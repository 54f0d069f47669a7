#include "ipose/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ipose/error.hpp"
#include "json_util.hpp"

namespace ipose {

namespace {

using detail::json;

std::string swap_lateral(const std::string& name) {
  static const std::pair<std::string, std::string> kPairs[] = {
      {"left", "right"}, {"Left", "Right"}, {"LEFT", "RIGHT"}};
  std::string out;
  for (std::size_t i = 0; i < name.size();) {
    bool matched = false;
    for (const auto& [a, b] : kPairs) {
      for (const auto& [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
        if (name.compare(i, from.size(), from) == 0) {
          out += to;
          i += from.size();
          matched = true;
          break;
        }
      }
      if (matched) break;
    }
    if (!matched) out += name[i++];
  }
  return out;
}

std::vector<std::size_t> lateral_indices(std::span<const std::string> names) {
  std::vector<std::size_t> perm(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto swapped = swap_lateral(names[i]);
    const auto it = std::find(names.begin(), names.end(), swapped);
    perm[i] = it == names.end() ? i : static_cast<std::size_t>(it - names.begin());
  }
  return perm;
}

bool involution(const std::vector<std::size_t>& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] >= p.size() || p[p[i]] != i) return false;
  }
  return true;
}

// Valid coordinates span [0, w) but pixel centres only reach w-1, so the
// strip (w-1, w) has no mirror image inside the frame; it lands on 0.
Point mirror(Point p, FlipAxis axis, ImageSize size) {
  if (axis == FlipAxis::kHorizontal) return {std::max(0.0, static_cast<double>(size.width - 1) - p.x), p.y};
  return {p.x, std::max(0.0, static_cast<double>(size.height - 1) - p.y)};
}

json permutation_to_json(const FlipPermutation& p, std::span<const std::string> instruments,
                         std::span<const std::string> joints) {
  auto names = [](const std::vector<std::size_t>& perm, std::span<const std::string> list) {
    json out = json::object();
    for (std::size_t i = 0; i < perm.size() && i < list.size(); ++i) {
      if (perm[i] != i) out[list[i]] = list[perm[i]];
    }
    return out;
  };
  return {{"instruments", names(p.instruments, instruments)}, {"joints", names(p.joints, joints)}};
}

std::vector<std::size_t> permutation_from_names(const json& j, std::span<const std::string> list,
                                                const std::string& where) {
  std::vector<std::size_t> perm(list.size());
  std::iota(perm.begin(), perm.end(), 0);
  if (!j.is_object()) throw ConfigError(where + " must map names to names");
  auto index = [&](const std::string& name) {
    const auto it = std::find(list.begin(), list.end(), name);
    if (it == list.end()) throw ConfigError(where + ": unknown name '" + name + "'");
    return static_cast<std::size_t>(it - list.begin());
  };
  for (const auto& [from, to] : j.items()) {
    if (!to.is_string()) throw ConfigError(where + ": '" + from + "' must map to a name");
    const auto a = index(from), b = index(to.get<std::string>());
    perm[a] = b;
    perm[b] = a;
  }
  return perm;
}

FlipPermutation read_permutation(const json& j, std::span<const std::string> instruments,
                                 std::span<const std::string> joints, const std::string& where) {
  detail::FieldReader r(j, where);
  FlipPermutation p = FlipPermutation::identity(instruments.size(), joints.size());
  if (r.has("instruments")) p.instruments = permutation_from_names(r.raw("instruments"), instruments, where + ".instruments");
  if (r.has("joints")) p.joints = permutation_from_names(r.raw("joints"), joints, where + ".joints");
  r.finish();
  if (!p.is_involution()) throw ConfigError(where + " is not an involution");
  return p;
}

std::vector<std::uint32_t> epoch_seed(std::uint64_t seed, std::size_t epoch) {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
          static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Flip augmentation

FlipPermutation FlipPermutation::identity(std::size_t num_instruments, std::size_t num_joints) {
  FlipPermutation p;
  p.instruments.resize(num_instruments);
  p.joints.resize(num_joints);
  std::iota(p.instruments.begin(), p.instruments.end(), 0);
  std::iota(p.joints.begin(), p.joints.end(), 0);
  return p;
}

FlipPermutation FlipPermutation::lateral(std::span<const std::string> instruments,
                                         std::span<const std::string> joints) {
  return {lateral_indices(instruments), lateral_indices(joints)};
}

bool FlipPermutation::is_involution() const { return involution(instruments) && involution(joints); }

void FlipPermutation::validate(std::size_t num_instruments, std::size_t num_joints) const {
  if (instruments.size() != num_instruments || joints.size() != num_joints) {
    throw ConfigError("flip permutation covers " + std::to_string(instruments.size()) +
                      " instruments / " + std::to_string(joints.size()) + " joints, expected " +
                      std::to_string(num_instruments) + " / " + std::to_string(num_joints));
  }
  if (!is_involution()) throw ConfigError("flip permutation is not an involution");
}

SceneAnnotation flip_annotation(const SceneAnnotation& annotation, FlipAxis axis,
                                const FlipPermutation& permutation) {
  permutation.validate(annotation.num_instruments(), annotation.num_joints());
  SceneAnnotation out = SceneAnnotation::empty(annotation.size, annotation.num_instruments(),
                                               annotation.num_joints());
  for (std::size_t m = 0; m < annotation.num_instruments(); ++m) {
    const std::size_t pm = permutation.instruments[m];
    out.presence[pm] = annotation.presence[m];
    for (std::size_t n = 0; n < annotation.num_joints(); ++n) {
      const auto& j = annotation.joints[m][n];
      if (j) out.joints[pm][permutation.joints[n]] = mirror(*j, axis, annotation.size);
    }
  }
  return out;
}

std::pair<Image, SceneAnnotation> augment(const Image& image, const SceneAnnotation& annotation,
                                          FlipAxis axis, const FlipPermutation& permutation) {
  if (image.size() != annotation.size) throw DataError("augment: image and annotation sizes differ");
  return {axis == FlipAxis::kHorizontal ? flip_horizontal(image) : flip_vertical(image),
          flip_annotation(annotation, axis, permutation)};
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<Tensor> parameters, AdamState& state, const AdamOptions& options) {
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    for (double g : parameters[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i) +
                           " (step " + std::to_string(state.step + 1) + ")");
      }
    }
  }
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : parameters) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != parameters.size() || state.second_moment.size() != parameters.size()) {
    throw ShapeError("adam_step: optimiser state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(parameters.size()));
  }
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    const auto& p = parameters[i];
    if (state.first_moment[i].size() != p.numel() || state.second_moment[i].size() != p.numel()) {
      throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    auto& p = parameters[i];
    auto values = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g;
      v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g * g;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      values[k] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("training: learning_rate must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("training: Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("training: Adam epsilon must be positive");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (!(sigma2 > 0.0)) throw ConfigError("training: sigma2 must be positive");
  if (!(loss.presence_weight >= 0.0)) throw ConfigError("training: presence_weight must be >= 0");
  if (!hflip_permutation.is_involution() || !vflip_permutation.is_involution()) {
    throw ConfigError("training: flip permutations must be involutions");
  }
}

std::string train_config_to_json(const TrainConfig& c, std::span<const std::string> instruments,
                                 std::span<const std::string> joints) {
  json j = {{"learning_rate", c.adam.learning_rate},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"hflip", c.hflip},
            {"vflip", c.vflip},
            {"sigma2", c.sigma2},
            {"absent_maps", c.loss.absent_maps == AbsentMapPolicy::kUniform ? "uniform" : "drop"},
            {"presence_weight", c.loss.presence_weight}};
  if (!c.hflip_permutation.instruments.empty()) {
    j["hflip_permutation"] = permutation_to_json(c.hflip_permutation, instruments, joints);
  }
  if (!c.vflip_permutation.instruments.empty()) {
    j["vflip_permutation"] = permutation_to_json(c.vflip_permutation, instruments, joints);
  }
  return j.dump(2);
}

TrainConfig train_config_from_json(std::string_view text, std::span<const std::string> instruments,
                                   std::span<const std::string> joints) {
  const auto j = detail::parse_json(text, "training");
  detail::FieldReader r(j, "training");
  TrainConfig c;
  r.read("learning_rate", c.adam.learning_rate);
  r.read("beta1", c.adam.beta1);
  r.read("beta2", c.adam.beta2);
  r.read("epsilon", c.adam.epsilon);
  r.read("batch_size", c.batch_size);
  r.read("epochs", c.epochs);
  r.read("seed", c.seed);
  r.read("hflip", c.hflip);
  r.read("vflip", c.vflip);
  r.read("sigma2", c.sigma2);
  std::string absent = "uniform";
  r.read("absent_maps", absent);
  if (absent != "uniform" && absent != "drop") {
    throw ConfigError("training.absent_maps must be 'uniform' or 'drop'");
  }
  c.loss.absent_maps = absent == "uniform" ? AbsentMapPolicy::kUniform : AbsentMapPolicy::kDrop;
  r.read("presence_weight", c.loss.presence_weight);
  c.hflip_permutation = r.has("hflip_permutation")
                            ? read_permutation(r.raw("hflip_permutation"), instruments, joints,
                                               "training.hflip_permutation")
                            : FlipPermutation::lateral(instruments, joints);
  c.vflip_permutation = r.has("vflip_permutation")
                            ? read_permutation(r.raw("vflip_permutation"), instruments, joints,
                                               "training.vflip_permutation")
                            : FlipPermutation::identity(instruments.size(), joints.size());
  r.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Loop

void check_dataset(const DetectorNet& model, std::span<const Sample> dataset) {
  const auto& cfg = model.config();
  if (dataset.empty()) throw DataError("training dataset is empty");
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    const std::string where = "sample " + std::to_string(i) + ": ";
    if (s.image.size() != cfg.input_size || s.image.channels != cfg.input_channels) {
      problems.push_back(where + "image is " + std::to_string(s.image.width) + "x" +
                         std::to_string(s.image.height) + "x" + std::to_string(s.image.channels) +
                         ", network expects " + std::to_string(cfg.input_size.width) + "x" +
                         std::to_string(cfg.input_size.height) + "x" +
                         std::to_string(cfg.input_channels));
      continue;
    }
    if (s.annotation.size != s.image.size() || s.annotation.num_instruments() != cfg.num_instruments ||
        s.annotation.num_joints() != cfg.num_joints) {
      problems.push_back(where + "annotation layout does not match the network");
      continue;
    }
    try {
      s.annotation.validate();
    } catch (const DataError& e) {
      problems.push_back(where + e.what());
    }
  }
  if (!problems.empty()) throw DatasetError(std::move(problems));
}

TrainResult train(DetectorNet& model, std::span<const Sample> dataset, const TrainConfig& config,
                  TrainState start, const TrainCallbacks& callbacks) {
  config.validate();
  check_dataset(model, dataset);
  const auto& net = model.config();
  if (config.hflip) config.hflip_permutation.validate(net.num_instruments, net.num_joints);
  const FlipPermutation vperm = config.vflip_permutation.instruments.empty()
                                    ? FlipPermutation::identity(net.num_instruments, net.num_joints)
                                    : config.vflip_permutation;
  if (config.vflip) vperm.validate(net.num_instruments, net.num_joints);

  TrainResult result;
  result.state = std::move(start);
  auto params = model.parameters();
  std::vector<std::size_t> order(dataset.size());

  for (std::size_t epoch = result.state.epochs_done; epoch < config.epochs; ++epoch) {
    const auto seed_words = epoch_seed(config.seed, epoch);
    std::seed_seq seq(seed_words.begin(), seed_words.end());
    std::mt19937_64 rng(seq);
    std::bernoulli_distribution coin(0.5);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t last = std::min(order.size(), first + config.batch_size);
      std::vector<std::vector<double>> images;
      std::vector<TargetStack> targets;
      for (std::size_t k = first; k < last; ++k) {
        const Sample& s = dataset[order[k]];
        Image image = s.image;
        SceneAnnotation ann = s.annotation;
        if (config.hflip && coin(rng)) {
          std::tie(image, ann) = augment(image, ann, FlipAxis::kHorizontal, config.hflip_permutation);
        }
        if (config.vflip && coin(rng)) {
          std::tie(image, ann) = augment(image, ann, FlipAxis::kVertical, vperm);
        }
        images.push_back(std::move(image.pixels));
        targets.push_back(synthesize_targets(ann, config.sigma2));
      }

      const Tensor batch = stack_images(images, net.input_channels, net.input_size);
      const auto out = model.forward(batch, Mode::kTrain);
      const auto loss = composite_loss(out.presence, out.maps, targets, config.loss);
      if (!std::isfinite(loss.terms.total)) {
        throw NumericError("non-finite loss at step " + std::to_string(result.state.steps_done + 1));
      }
      for (auto& p : params) p.zero_grad();
      loss.loss.backward();
      adam_step(params, result.state.adam, config.adam);

      LossRecord record{++result.state.steps_done, epoch, loss.terms.total, loss.terms.presence,
                        loss.terms.maps};
      result.history.push_back(record);
      if (callbacks.on_step) callbacks.on_step(record);
    }
    result.state.epochs_done = epoch + 1;
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(epoch, model, result.state);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kFirstMomentPrefix = "optim.adam.m.";
constexpr const char* kSecondMomentPrefix = "optim.adam.v.";
}  // namespace

Checkpoint make_checkpoint(const DetectorNet& model, const TrainState& state, std::uint64_t seed) {
  Checkpoint c = model.to_checkpoint();
  const auto named = model.named_parameters();
  if (!state.adam.first_moment.empty()) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& [name, t] = named[i];
      c.tensors.push_back({kFirstMomentPrefix + name, t.shape(), state.adam.first_moment.at(i)});
      c.tensors.push_back({kSecondMomentPrefix + name, t.shape(), state.adam.second_moment.at(i)});
    }
  }
  json meta = {{"epochs_done", state.epochs_done},
               {"steps_done", state.steps_done},
               {"adam_step", state.adam.step},
               {"seed", seed}};
  c.metadata_json = meta.dump();
  return c;
}

TrainState restore_train_state(const Checkpoint& checkpoint, const DetectorNet& model) {
  TrainState s;
  json meta;
  try {
    meta = json::parse(checkpoint.metadata_json);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  auto count = [&](const char* key) -> std::uint64_t {
    if (!meta.contains(key)) return 0;
    if (!meta[key].is_number_unsigned()) throw DataError(std::string("checkpoint metadata '") + key + "' is invalid");
    return meta[key].get<std::uint64_t>();
  };
  s.epochs_done = count("epochs_done");
  s.steps_done = count("steps_done");
  s.adam.step = count("adam_step");
  const auto named = model.named_parameters();
  for (const auto& [name, t] : named) {
    const auto* m = checkpoint.find(kFirstMomentPrefix + name);
    const auto* v = checkpoint.find(kSecondMomentPrefix + name);
    if (!m && !v) {
      if (s.adam.step != 0 || !s.adam.first_moment.empty()) {
        throw DataError("checkpoint lacks Adam moments for '" + name + "'");
      }
      continue;
    }
    if (!m || !v || m->shape != t.shape() || v->shape != t.shape()) {
      throw DataError("checkpoint Adam moments for '" + name + "' are incomplete or misshapen");
    }
    s.adam.first_moment.push_back(m->values);
    s.adam.second_moment.push_back(v->values);
  }
  if (!s.adam.first_moment.empty() && s.adam.first_moment.size() != named.size()) {
    throw DataError("checkpoint holds Adam moments for only some parameters");
  }
  return s;
}

}  // namespace ipose
