#include "ipose/detector_net.hpp"

#include <cmath>
#include <random>
#include <set>

#include "ipose/error.hpp"
#include "json_util.hpp"

namespace ipose {

namespace {

constexpr const char* kOptimizerPrefix = "optim.";

Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(values), true);
}

ConvBlock make_block(std::size_t in_channels, std::size_t out_channels, std::size_t k,
                     std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_channels * k * k);
  ConvBlock b;
  b.kernel = init_normal({out_channels, in_channels, k, k}, std::sqrt(2.0 / fan_in), rng);
  b.gamma = Tensor::full({out_channels}, 1.0, true);
  b.beta = Tensor::zeros({out_channels}, true);
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkConfig

void NetworkConfig::validate() const {
  if (depth < 1) throw ConfigError("network: depth must be >= 1");
  if (depth > 16) throw ConfigError("network: depth must be <= 16");
  if (base_features < 1) throw ConfigError("network: base_features must be >= 1");
  if (num_instruments < 1) throw ConfigError("network: num_instruments must be >= 1");
  if (num_joints < 1) throw ConfigError("network: num_joints must be >= 1");
  if (input_channels < 1) throw ConfigError("network: input_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("network: kernel_size must be odd");
  const std::size_t step = std::size_t{1} << depth;
  if (input_size.width == 0 || input_size.height == 0 || input_size.width % step != 0 ||
      input_size.height % step != 0) {
    throw ConfigError("network: input size " + std::to_string(input_size.width) + "x" +
                      std::to_string(input_size.height) + " is not divisible by 2^depth = " +
                      std::to_string(step));
  }
  if (!(bn_epsilon > 0.0)) throw ConfigError("network: bn_epsilon must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) {
    throw ConfigError("network: bn_momentum must lie in [0, 1)");
  }
}

std::size_t NetworkConfig::encoder_channels(std::size_t stage) const {
  return base_features << stage;
}

std::size_t NetworkConfig::decoder_channels(std::size_t stage) const {
  return std::max<std::size_t>(1, encoder_channels(depth - 1 - stage) / 2);
}

std::size_t NetworkConfig::bottleneck_size() const {
  return encoder_channels(depth - 1) * (input_size.width >> depth) * (input_size.height >> depth);
}

std::string network_config_to_json(const NetworkConfig& c) {
  detail::json j = {
      {"depth", c.depth},
      {"base_features", c.base_features},
      {"width", c.input_size.width},
      {"height", c.input_size.height},
      {"input_channels", c.input_channels},
      {"num_instruments", c.num_instruments},
      {"num_joints", c.num_joints},
      {"kernel_size", c.kernel_size},
      {"skip_connections", c.skip_connections},
      {"head_hidden", c.head_hidden},
      {"bn_epsilon", c.bn_epsilon},
      {"bn_momentum", c.bn_momentum},
  };
  return j.dump(2);
}

NetworkConfig network_config_from_json(std::string_view text) {
  const auto j = detail::parse_json(text, "network");
  detail::FieldReader r(j, "network");
  NetworkConfig c;
  r.read("depth", c.depth);
  r.read("base_features", c.base_features);
  r.read("width", c.input_size.width);
  r.read("height", c.input_size.height);
  r.read("input_channels", c.input_channels);
  r.read("num_instruments", c.num_instruments);
  r.read("num_joints", c.num_joints);
  r.read("kernel_size", c.kernel_size);
  r.read("skip_connections", c.skip_connections);
  r.read("head_hidden", c.head_hidden);
  r.read("bn_epsilon", c.bn_epsilon);
  r.read("bn_momentum", c.bn_momentum);
  r.finish();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// DetectorNet

DetectorNet DetectorNet::build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  DetectorNet net;
  net.config_ = config;
  std::mt19937_64 rng(seed);
  const std::size_t k = config.kernel_size;

  std::size_t channels = config.input_channels;
  for (std::size_t i = 0; i < config.depth; ++i) {
    net.encoder_.push_back(make_block(channels, config.encoder_channels(i), k, rng));
    channels = config.encoder_channels(i);
  }
  for (std::size_t j = 0; j < config.depth; ++j) {
    std::size_t in = channels;
    if (config.skip_connections) in += config.encoder_channels(config.depth - 1 - j);
    net.decoder_.push_back(make_block(in, config.decoder_channels(j), k, rng));
    channels = config.decoder_channels(j);
  }
  net.bn_states_.resize(2 * config.depth);
  for (std::size_t i = 0; i < config.depth; ++i) {
    net.bn_states_[i].reset(config.encoder_channels(i));
    net.bn_states_[config.depth + i].reset(config.decoder_channels(i));
  }
  for (auto& s : net.bn_states_) {
    s.epsilon = config.bn_epsilon;
    s.momentum = config.bn_momentum;
  }

  const std::size_t maps = config.num_instruments * config.num_joints;
  net.out_kernel_ =
      init_normal({maps, channels, 1, 1}, std::sqrt(1.0 / static_cast<double>(channels)), rng);
  net.out_bias_ = Tensor::zeros({maps}, true);

  std::size_t head_in = config.bottleneck_size();
  if (config.head_hidden > 0) {
    net.hidden_weight_ = init_normal({head_in, config.head_hidden},
                                     std::sqrt(2.0 / static_cast<double>(head_in)), rng);
    net.hidden_bias_ = Tensor::zeros({config.head_hidden}, true);
    head_in = config.head_hidden;
  }
  net.head_weight_ = init_normal({head_in, config.num_instruments},
                                 std::sqrt(1.0 / static_cast<double>(head_in)), rng);
  net.head_bias_ = Tensor::zeros({config.num_instruments}, true);
  return net;
}

std::vector<std::pair<std::string, Tensor>> DetectorNet::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto add_block = [&](const std::string& prefix, const ConvBlock& b) {
    out.emplace_back(prefix + ".kernel", b.kernel);
    out.emplace_back(prefix + ".gamma", b.gamma);
    out.emplace_back(prefix + ".beta", b.beta);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) add_block("enc" + std::to_string(i), encoder_[i]);
  for (std::size_t j = 0; j < decoder_.size(); ++j) add_block("dec" + std::to_string(j), decoder_[j]);
  out.emplace_back("out.kernel", out_kernel_);
  out.emplace_back("out.bias", out_bias_);
  if (config_.head_hidden > 0) {
    out.emplace_back("head.hidden.weight", hidden_weight_);
    out.emplace_back("head.hidden.bias", hidden_bias_);
  }
  out.emplace_back("head.weight", head_weight_);
  out.emplace_back("head.bias", head_bias_);
  return out;
}

std::vector<Tensor> DetectorNet::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t DetectorNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

namespace {

std::string stats_name(const NetworkConfig& c, std::size_t index, const char* what) {
  const bool enc = index < c.depth;
  return (enc ? "enc" : "dec") + std::to_string(enc ? index : index - c.depth) + "." + what;
}

}  // namespace

Checkpoint DetectorNet::to_checkpoint() const {
  Checkpoint c;
  c.config_json = network_config_to_json(config_);
  for (const auto& [name, t] : named_parameters()) {
    c.tensors.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  for (std::size_t i = 0; i < bn_states_.size(); ++i) {
    const auto& s = bn_states_[i];
    c.tensors.push_back({stats_name(config_, i, "running_mean"), {s.running_mean.size()}, s.running_mean});
    c.tensors.push_back({stats_name(config_, i, "running_var"), {s.running_var.size()}, s.running_var});
  }
  return c;
}

DetectorNet DetectorNet::from_checkpoint(const Checkpoint& checkpoint) {
  NetworkConfig config;
  try {
    config = network_config_from_json(checkpoint.config_json);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config block: ") + e.what());
  }
  DetectorNet net = build(config, 0);
  std::set<std::string> expected;

  auto take = [&](const std::string& name, std::span<double> dst, const Shape& shape) {
    expected.insert(name);
    const NamedTensor* t = checkpoint.find(name);
    if (!t) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (t->shape != shape) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_string(t->shape) +
                      ", model expects " + shape_string(shape));
    }
    std::copy(t->values.begin(), t->values.end(), dst.begin());
  };
  for (auto& [name, t] : net.named_parameters()) {
    Tensor handle = t;
    take(name, handle.mutable_data(), t.shape());
  }
  for (std::size_t i = 0; i < net.bn_states_.size(); ++i) {
    auto& s = net.bn_states_[i];
    take(stats_name(config, i, "running_mean"), s.running_mean, {s.running_mean.size()});
    take(stats_name(config, i, "running_var"), s.running_var, {s.running_var.size()});
  }
  for (const auto& t : checkpoint.tensors) {
    if (!expected.count(t.name) && t.name.rfind(kOptimizerPrefix, 0) != 0) {
      throw DataError("checkpoint has unknown tensor '" + t.name + "'");
    }
  }
  return net;
}

void DetectorNet::check_input(const Tensor& images) const {
  const Shape expected_tail{config_.input_channels, config_.input_size.height,
                            config_.input_size.width};
  if (images.rank() != 4 || images.dim(0) == 0 ||
      Shape(images.shape().begin() + 1, images.shape().end()) != expected_tail) {
    throw ShapeError("detector input " + shape_string(images.shape()) + " does not match [B, " +
                     std::to_string(config_.input_channels) + ", " +
                     std::to_string(config_.input_size.height) + ", " +
                     std::to_string(config_.input_size.width) + "]");
  }
}

SceneBatch DetectorNet::forward(const Tensor& images, Mode mode) {
  check_input(images);
  return run(images, mode, mode == Mode::kTrain ? &bn_states_ : nullptr);
}

SceneBatch DetectorNet::predict(const Tensor& images) const {
  check_input(images);
  NoGradGuard guard;
  return run(images, Mode::kInfer, nullptr);
}

SceneBatch DetectorNet::run(const Tensor& images, Mode mode,
                            std::vector<BatchNormState>* states) const {
  auto normalise = [&](const Tensor& x, const ConvBlock& b, std::size_t index) {
    if (mode == Mode::kTrain) return batch_norm(x, b.gamma, b.beta, (*states)[index], Mode::kTrain);
    return batch_norm_infer(x, b.gamma, b.beta, bn_states_[index]);
  };

  const std::size_t depth = config_.depth;
  std::vector<Tensor> skips;
  Tensor x = images;
  for (std::size_t i = 0; i < depth; ++i) {
    x = relu(normalise(conv2d(x, encoder_[i].kernel, Tensor()), encoder_[i], i));
    if (config_.skip_connections) skips.push_back(x);
    x = max_pool2(x);
  }

  SceneBatch out;
  Tensor features = flatten(x);
  if (config_.head_hidden > 0) features = relu(dense(features, hidden_weight_, hidden_bias_));
  out.presence_logits = dense(features, head_weight_, head_bias_);
  out.presence = sigmoid(out.presence_logits);

  for (std::size_t j = 0; j < depth; ++j) {
    x = upsample2(x);
    if (config_.skip_connections) x = concat_channels(x, skips[depth - 1 - j]);
    x = relu(normalise(conv2d(x, decoder_[j].kernel, Tensor()), decoder_[j], depth + j));
  }
  out.map_logits = conv2d(x, out_kernel_, out_bias_);
  out.maps = spatial_softmax(out.map_logits);
  return out;
}

Tensor stack_images(std::span<const std::vector<double>> images, std::size_t channels,
                    ImageSize size) {
  const std::size_t per_image = channels * size.pixels();
  std::vector<double> data;
  data.reserve(images.size() * per_image);
  for (const auto& img : images) {
    if (img.size() != per_image) {
      throw ShapeError("stack_images: image has " + std::to_string(img.size()) +
                       " values, expected " + std::to_string(per_image));
    }
    data.insert(data.end(), img.begin(), img.end());
  }
  return Tensor::from_data({images.size(), channels, size.height, size.width}, std::move(data));
}

}  // namespace ipose
