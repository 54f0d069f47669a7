#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ipose/dataset.hpp"
#include "ipose/detector_net.hpp"
#include "ipose/evaluation.hpp"
#include "ipose/training.hpp"

namespace ipose::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

struct DataConfig {
  std::filesystem::path manifest;
  SplitPolicy split{SplitPolicy::Kind::kFirstFraction, 0.8, {}, {}};
  // Resample images (and annotations) to the network input size on load.
  bool resize = false;
};

struct EvalConfig {
  EvalOptions options;
  bool plot = false;
};

/// Everything one training run needs. The training section is kept as JSON
/// until the dataset's instrument and joint names are known, because flip
/// permutations are written in terms of those names.
struct RunConfig {
  NetworkConfig network;
  std::string training_json = "{}";
  DataConfig data;
  EvalConfig evaluation;
  std::filesystem::path output_dir;

  TrainConfig training(const DatasetSchema& schema) const;
};

/// Parses and validates a run config. Relative paths resolve against
/// `base_dir`. Unknown keys anywhere are rejected with ConfigError.
RunConfig parse_run_config(std::string_view json, const std::filesystem::path& base_dir);
/// Effective config with every default spelled out; paths are absolute.
std::string run_config_to_json(const RunConfig& config, const DatasetSchema& schema);

/// Reads a config file; the file's directory is the base for relative paths.
/// `seed` and `output_dir` override the file when given.
RunConfig load_run_config(const std::filesystem::path& file, std::optional<std::uint64_t> seed = std::nullopt,
                          std::optional<std::filesystem::path> output_dir = std::nullopt);

/// Checks that a network can consume the dataset: M, N and channel counts
/// must agree; image size must agree unless `resize` is set.
void check_compatible(const NetworkConfig& network, const DatasetSchema& schema, bool resize);

/// Entry point shared by the executable and tests. `args` excludes the
/// program name. Returns one of ExitCode.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace ipose::cli
