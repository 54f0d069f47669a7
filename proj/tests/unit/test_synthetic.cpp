#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ipose/dataset.hpp"
#include "ipose/error.hpp"
#include "ipose/synthetic.hpp"

using namespace ipose;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Joint positions recomputed from the logged draw: shaft from start along
// the angle (measured from straight down, toward the centre), two prongs at
// angle +- spread, every point rounded to the nearest pixel.
std::map<std::string, Point> recompute(const RenderRecord& r, Side side) {
  const double s = side == Side::kLeft ? 1.0 : -1.0;
  const double deg = M_PI / 180.0;
  const double ex = r.start.x + r.length * s * std::sin(r.angle * deg);
  const double ey = r.start.y + r.length * std::cos(r.angle * deg);
  std::vector<Point> prongs;
  for (double a : {r.angle + r.spread, r.angle - r.spread}) {
    prongs.push_back({std::round(ex + r.tip_length * s * std::sin(a * deg)),
                      std::round(ey + r.tip_length * std::cos(a * deg))});
  }
  if (prongs[1].x < prongs[0].x) std::swap(prongs[0], prongs[1]);
  return {{"shaft_start", {std::round(r.start.x), std::round(r.start.y)}},
          {"shaft_end", {std::round(ex), std::round(ey)}},
          {"left_tip", prongs[0]},
          {"right_tip", prongs[1]}};
}

}  // namespace

TEST(Synthetic, JointsMatchGeometricRecomputation) {
  auto spec = default_synthetic_spec(2, 4, {64, 64}, 17);
  spec.joints = kSyntheticJointNames;
  const auto ds = generate_synthetic(spec, 60);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    const auto& ann = ds.manifest.entries[i].annotation;
    EXPECT_NO_THROW(ann.validate());
    for (std::size_t m = 0; m < 2; ++m) {
      EXPECT_EQ(ann.presence[m], ds.renders[i][m].present);
      if (!ann.presence[m]) continue;
      const auto expected = recompute(ds.renders[i][m], spec.instruments[m].side);
      for (std::size_t n = 0; n < spec.joints.size(); ++n) {
        EXPECT_EQ(*ann.joints[m][n], expected.at(spec.joints[n])) << i << " " << m << " " << spec.joints[n];
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(Synthetic, SideConstrainsStartColumn) {
  auto spec = default_synthetic_spec(2, 3, {64, 64}, 2);
  for (auto& s : spec.instruments) s.presence_probability = 1.0;
  const auto ds = generate_synthetic(spec, 30);
  for (const auto& recs : ds.renders) {
    EXPECT_LT(recs[0].start.x, 0.45 * 64);
    EXPECT_GT(recs[1].start.x, 63 - 0.45 * 64);
  }
}

TEST(Synthetic, PresenceProbabilityExtremes) {
  auto spec = default_synthetic_spec(2, 3, {32, 32}, 3);
  spec.instruments[0].presence_probability = 1.0;
  spec.instruments[1].presence_probability = 0.0;
  spec.instruments[0].max_length = 12;
  spec.instruments[0].min_length = 8;
  const auto ds = generate_synthetic(spec, 20);
  for (const auto& e : ds.manifest.entries) {
    EXPECT_TRUE(e.annotation.presence[0]);
    EXPECT_FALSE(e.annotation.presence[1]);
  }
}

TEST(Synthetic, PresenceFrequencyNearProbability) {
  const auto ds = generate_synthetic(default_synthetic_spec(1, 3, {64, 64}, 4), 400);
  std::size_t present = 0;
  for (const auto& e : ds.manifest.entries) present += e.annotation.presence[0];
  EXPECT_NEAR(static_cast<double>(present) / 400.0, 0.5, 0.08);
}

TEST(Synthetic, PureFunctionOfSpecAndCount) {
  auto spec = default_synthetic_spec(2, 3, {32, 32}, 8);
  spec.noise_level = 0.0;
  for (auto& s : spec.instruments) {
    s.min_length = 8;
    s.max_length = 12;
  }
  const auto a = generate_synthetic(spec, 5), b = generate_synthetic(spec, 5);
  EXPECT_EQ(a.images, b.images);
  spec.noise_level = 0.05;
  const auto c = generate_synthetic(spec, 5), d = generate_synthetic(spec, 5);
  EXPECT_EQ(c.images, d.images);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(c.manifest.entries[i].annotation, d.manifest.entries[i].annotation);
}

TEST(Synthetic, InstrumentIsVisibleInImage) {
  auto spec = default_synthetic_spec(1, 3, {64, 64}, 1);
  spec.instruments[0].presence_probability = 1.0;
  spec.noise_level = 0.0;
  spec.background_variation = 0.0;
  const auto ds = generate_synthetic(spec, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& a = ds.manifest.entries[i].annotation;
    const auto p = *a.joints[0][2];  // shaft_end
    EXPECT_GT(ds.images[i].at(0, static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)), 0.6);
    EXPECT_NEAR(ds.images[i].at(0, 63, 0), spec.background, 1.0 / 255);
  }
}

TEST(Synthetic, InvalidSpecsRejected) {
  auto spec = default_synthetic_spec(1, 3, {64, 64}, 1);
  EXPECT_THROW(generate_synthetic(spec, 0), ConfigError);
  auto bad = spec;
  bad.instruments[0].presence_probability = 1.5;
  EXPECT_THROW(generate_synthetic(bad, 1), ConfigError);
  bad = spec;
  bad.instruments[0].min_length = 40;
  bad.instruments[0].max_length = 30;
  EXPECT_THROW(generate_synthetic(bad, 1), ConfigError);
  bad = spec;
  bad.joints = {"elbow"};
  EXPECT_THROW(generate_synthetic(bad, 1), ConfigError);
  bad = spec;
  bad.instruments[0].presence_probability = 1.0;
  bad.instruments[0].min_length = 200;
  bad.instruments[0].max_length = 210;
  EXPECT_THROW(generate_synthetic(bad, 1), ConfigError);
}

TEST(Synthetic, SpecJsonRoundTrip) {
  auto spec = default_synthetic_spec(3, 4, {48, 32}, 99);
  spec.instruments[2].side = Side::kRight;
  const auto back = synthetic_spec_from_json(synthetic_spec_to_json(spec));
  EXPECT_EQ(synthetic_spec_to_json(back), synthetic_spec_to_json(spec));
  EXPECT_THROW(synthetic_spec_from_json(R"({"width": 64, "oops": 1})"), ConfigError);
}

TEST(Synthetic, WrittenDatasetReloadsIdentically) {
  const auto dir = std::filesystem::path(IPOSE_TEST_TMP) / "synthetic" / "written";
  std::filesystem::remove_all(dir);
  const auto ds = generate_synthetic(default_synthetic_spec(2, 3, {32, 32}, 6), 6);
  write_synthetic(ds, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "render_log.json"));
  const auto m = load_manifest(dir);
  const auto samples = load_samples(m);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(samples[i].image, ds.images[i]);
    EXPECT_EQ(samples[i].annotation, ds.manifest.entries[i].annotation);
  }
  const auto first = slurp(dir / "images" / "000000.pgm");
  write_synthetic(ds, dir);
  EXPECT_EQ(slurp(dir / "images" / "000000.pgm"), first);
}
