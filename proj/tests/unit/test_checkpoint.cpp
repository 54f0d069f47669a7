#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "gradcheck.hpp"
#include "ipose/checkpoint.hpp"
#include "ipose/detector_net.hpp"
#include "ipose/error.hpp"

using namespace ipose;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.config_json = R"({"a":1})";
  c.metadata_json = R"({"epoch":3})";
  c.tensors.push_back({"w", {2, 2}, {1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e308}});
  c.tensors.push_back({"s", {}, {M_PI}});
  return c;
}

// Re-signs a modified byte stream so only the targeted defect remains.
void resign(std::vector<std::uint8_t>& bytes) {
  const auto digest = fnv1a64(std::span(bytes).first(bytes.size() - 8));
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<std::uint8_t>(digest >> (8 * i));
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto c = sample();
  const auto bytes = serialize_checkpoint(c);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back, c);
  EXPECT_TRUE(std::signbit(back.tensors[0].values[1]));
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
  const auto bytes = serialize_checkpoint(sample());
  EXPECT_EQ(std::memcmp(bytes.data(), "IPOSECKP", 8), 0);
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
}

TEST(Checkpoint, TruncationRejected) {
  const auto bytes = serialize_checkpoint(sample());
  for (std::size_t len : {std::size_t{0}, std::size_t{7}, std::size_t{20}, bytes.size() - 1}) {
    EXPECT_THROW(deserialize_checkpoint(std::span(bytes).first(len)), DataError) << len;
  }
}

TEST(Checkpoint, CorruptionRejected) {
  auto bytes = serialize_checkpoint(sample());
  bytes[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(bytes), DataError);
}

TEST(Checkpoint, VersionMismatchRejected) {
  auto bytes = serialize_checkpoint(sample());
  bytes[8] = 2;
  resign(bytes);
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, BadMagicRejected) {
  auto bytes = serialize_checkpoint(sample());
  bytes[0] = 'X';
  resign(bytes);
  EXPECT_THROW(deserialize_checkpoint(bytes), DataError);
}

TEST(Checkpoint, DuplicateNamesRejected) {
  auto c = sample();
  c.tensors.push_back(c.tensors.front());
  EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(c)), DataError);
}

TEST(Checkpoint, ModelRoundTripReproducesInference) {
  NetworkConfig cfg;
  cfg.depth = 2;
  cfg.base_features = 4;
  cfg.input_size = {16, 16};
  cfg.num_instruments = 2;
  cfg.num_joints = 3;
  auto net = DetectorNet::build(cfg, 12);
  std::mt19937_64 rng(1);
  const auto x = ipose::test::random_tensor({2, 1, 16, 16}, rng, 0, 1, false);
  net.forward(x, Mode::kTrain);  // make the running statistics non-trivial

  const auto dir = std::filesystem::path(IPOSE_TEST_TMP) / "checkpoint";
  std::filesystem::create_directories(dir);
  save_checkpoint(net.to_checkpoint(), dir / "model.ckpt");
  const auto loaded = DetectorNet::from_checkpoint(load_checkpoint(dir / "model.ckpt"));
  EXPECT_EQ(loaded.config(), cfg);
  EXPECT_EQ(loaded.parameter_count(), net.parameter_count());
  const auto a = net.predict(x), b = loaded.predict(x);
  for (std::size_t i = 0; i < a.maps.numel(); ++i) ASSERT_EQ(a.maps.at(i), b.maps.at(i));
  for (std::size_t i = 0; i < a.presence.numel(); ++i) ASSERT_EQ(a.presence.at(i), b.presence.at(i));
  EXPECT_EQ(serialize_checkpoint(loaded.to_checkpoint()), serialize_checkpoint(net.to_checkpoint()));
}

TEST(Checkpoint, ModelRejectsMissingOrMisshapenTensors) {
  NetworkConfig cfg;
  cfg.depth = 1;
  cfg.base_features = 2;
  cfg.input_size = {4, 4};
  cfg.num_joints = 1;
  const auto good = DetectorNet::build(cfg, 0).to_checkpoint();

  auto missing = good;
  missing.tensors.pop_back();
  EXPECT_THROW(DetectorNet::from_checkpoint(missing), DataError);

  auto misshapen = good;
  misshapen.tensors.front().shape.push_back(1);
  EXPECT_THROW(DetectorNet::from_checkpoint(misshapen), DataError);

  auto unknown = good;
  unknown.tensors.push_back({"mystery", {1}, {0.0}});
  EXPECT_THROW(DetectorNet::from_checkpoint(unknown), DataError);

  auto with_optimiser = good;
  with_optimiser.tensors.push_back({"optim.anything", {1}, {0.0}});
  EXPECT_NO_THROW(DetectorNet::from_checkpoint(with_optimiser));
}

TEST(Checkpoint, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  EXPECT_EQ(fnv1a64(a), 0xaf63dc4c8601ec8cULL);
}
