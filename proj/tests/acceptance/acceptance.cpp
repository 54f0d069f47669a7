// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers as arguments to run a
// subset, e.g. `ipose_acceptance 5 6`.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_cases.hpp"
#include "ipose/checkpoint.hpp"
#include "ipose/detector_net.hpp"
#include "ipose/evaluation.hpp"
#include "ipose/image.hpp"
#include "ipose/scene_model.hpp"
#include "ipose/synthetic.hpp"
#include "ipose/training.hpp"
#include "oracles.hpp"

using namespace ipose;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects sub-check failures; the first few are reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 5) messages_ += (messages_.empty() ? "" : "; ") + what;
  }
  bool ok() const { return failures_ == 0; }
  std::string failures() const {
    return messages_ + (failures_ > 5 ? " (+" + std::to_string(failures_ - 5) + " more)" : "");
  }

 private:
  std::size_t failures_ = 0;
  std::string messages_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks c;
  double worst = 0;
  std::string worst_case;
  std::size_t cases = 0, entries = 0;
  for (const auto& gc : test::gradient_cases()) {
    const auto r = gc.run(2024);
    ++cases;
    entries += r.checked;
    c.expect(r.checked >= test::kMinSamplesPerCase, gc.name + " sampled only " + std::to_string(r.checked));
    c.expect(r.max_error < test::kGradTolerance, gc.name + ": " + r.worst);
    if (r.max_error > worst) {
      worst = r.max_error;
      worst_case = gc.name;
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 300.0, "runtime " + fmt("%.1f", secs) + " s");
  return {c.ok(), std::to_string(cases) + " operations, " + std::to_string(entries) +
                      " entries, worst relative error " + fmt("%.2e", worst) + " (" + worst_case + "), " +
                      fmt("%.1f", secs) + " s" + (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

Outcome loss_decomposition() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> prob(1e-3, 1 - 1e-3), logit(-4, 4);
  Checks c;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto target = synthesize_targets(test::random_annotation({3, 3}, 2, 1, rng, trial % 3 == 0, 0.5));
    SceneOutput out{{3, 3}, 2, 1, {prob(rng), prob(rng)}, std::vector<double>(18)};
    for (std::size_t k = 0; k < 2; ++k) {
      double s = 0;
      for (std::size_t i = 0; i < 9; ++i) s += out.maps[k * 9 + i] = std::exp(logit(rng));
      for (std::size_t i = 0; i < 9; ++i) out.maps[k * 9 + i] /= s;
    }
    const double brute = test::brute_force_scene_ce(out, target);
    const double plain = composite_loss(out, target).total;

    // The differentiable batch form must agree as well.
    const auto presence = Tensor::from_data({1, 2}, out.presence);
    const auto maps = Tensor::from_data({1, 2, 3, 3}, out.maps);
    const std::vector<TargetStack> ts{target};
    const double tensor = composite_loss(presence, maps, ts).loss.item();

    worst = std::max({worst, std::abs(plain - brute), std::abs(tensor - brute)});
    c.expect(std::abs(plain - brute) <= 1e-10, "trial " + std::to_string(trial) + ": " + fmt("%.3e", plain - brute));
    c.expect(std::abs(tensor - brute) <= 1e-10, "trial " + std::to_string(trial) + " (tensor)");
  }
  return {c.ok(), "100 pairs, max |composite - enumeration| = " + fmt("%.2e", worst) +
                      (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

Outcome target_validity() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> side(1, 48), count(1, 4);
  Checks c;
  std::size_t maps = 0, uniform = 0, argmax = 0, ratios = 0;
  double worst_sum = 0;
  for (int i = 0; i < 1000; ++i) {
    const ImageSize size{side(rng), side(rng)};
    const bool integral = i % 2 == 0;
    const auto ann = test::random_annotation(size, count(rng), count(rng), rng, integral, 0.6);
    const auto t = synthesize_targets(ann);
    const double u = 1.0 / static_cast<double>(size.pixels());
    for (std::size_t m = 0; m < ann.num_instruments(); ++m) {
      for (std::size_t n = 0; n < ann.num_joints(); ++n) {
        const auto map = t.map(m, n);
        ++maps;
        const double s = std::accumulate(map.begin(), map.end(), 0.0);
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        c.expect(std::abs(s - 1.0) <= 1e-9, "map sum " + fmt("%.17g", s));
        if (!ann.presence[m]) {
          ++uniform;
          c.expect(std::all_of(map.begin(), map.end(), [&](double v) { return v == u; }), "absent map not uniform");
          continue;
        }
        const Point p = *ann.joints[m][n];
        const double fx = p.x - std::floor(p.x), fy = p.y - std::floor(p.y);
        if (std::abs(fx - 0.5) > 1e-6 && std::abs(fy - 0.5) > 1e-6) {
          ++argmax;
          const Pixel expected{std::min<std::size_t>(static_cast<std::size_t>(std::lround(p.x)), size.width - 1),
                               std::min<std::size_t>(static_cast<std::size_t>(std::lround(p.y)), size.height - 1)};
          c.expect(argmax_pixel(map, size) == expected, "argmax off the joint pixel");
        }
        // Three pixels right of an integral joint: exp(-9 / (2 sigma^2)).
        if (integral && p.x + 3 < static_cast<double>(size.width)) {
          const auto x = static_cast<std::size_t>(p.x), y = static_cast<std::size_t>(p.y);
          const double r = map[y * size.width + x + 3] / map[y * size.width + x];
          if (map[y * size.width + x + 3] > 0) {
            ++ratios;
            c.expect(std::abs(r - std::exp(-9.0 / 20.0)) <= 1e-6, "ratio " + fmt("%.9f", r));
          }
        }
      }
    }
  }
  // Worked example: 21x21 map, joint at (10,10), pixel (10,13).
  auto single = SceneAnnotation::empty({21, 21}, 1, 1);
  single.presence[0] = true;
  single.joints[0][0] = Point{10, 10};
  const auto ex = synthesize_targets(single).map(0, 0);
  const double ratio = ex[13 * 21 + 10] / ex[10 * 21 + 10];
  c.expect(std::abs(ratio - std::exp(-9.0 / 20.0)) <= 1e-6, "worked example ratio " + fmt("%.9f", ratio));
  return {c.ok(), "1000 annotations, " + std::to_string(maps) + " maps (" + std::to_string(uniform) +
                      " uniform), max |sum-1| " + fmt("%.1e", worst_sum) + ", " + std::to_string(argmax) +
                      " argmax and " + std::to_string(ratios) + " ratio checks, example ratio " +
                      fmt("%.9f", ratio) + (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

bool check_outputs(const SceneBatch& out, const NetworkConfig& cfg, std::size_t batch, Checks& c,
                   const std::string& label) {
  const Shape presence{batch, cfg.num_instruments};
  const Shape maps{batch, cfg.num_instruments * cfg.num_joints, cfg.input_size.height, cfg.input_size.width};
  const bool shapes = out.presence.shape() == presence && out.maps.shape() == maps;
  c.expect(shapes, label + ": wrong output shape");
  if (!shapes) return false;
  for (double p : out.presence.data()) c.expect(p > 0.0 && p < 1.0, label + ": presence outside (0,1)");
  const std::size_t hw = cfg.input_size.pixels();
  for (std::size_t k = 0; k < batch * cfg.num_instruments * cfg.num_joints; ++k) {
    const auto d = out.maps.data().subspan(k * hw, hw);
    c.expect(std::abs(std::accumulate(d.begin(), d.end(), 0.0) - 1.0) < 1e-9, label + ": map does not sum to 1");
  }
  return true;
}

Outcome architecture_shapes() {
  std::mt19937_64 rng(404);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  Checks c;
  std::string summary;
  for (int i = 0; i < 20; ++i) {
    NetworkConfig cfg;
    cfg.depth = pick(1, 4);
    cfg.base_features = pick(1, 8);
    const std::size_t unit = std::size_t{1} << cfg.depth;
    cfg.input_size = {unit * pick(1, 48 / unit + 1), unit * pick(1, 40 / unit + 1)};
    cfg.input_channels = pick(0, 1) ? 3 : 1;
    cfg.num_instruments = pick(1, 3);
    cfg.num_joints = pick(1, 4);
    cfg.kernel_size = 2 * pick(0, 2) + 1;
    cfg.skip_connections = pick(0, 1) == 1;
    cfg.head_hidden = pick(0, 1) ? pick(1, 6) : 0;
    const std::size_t batch = pick(1, 3);
    auto net = DetectorNet::build(cfg, 1000 + static_cast<std::uint64_t>(i));
    const auto images = test::random_tensor(
        {batch, cfg.input_channels, cfg.input_size.height, cfg.input_size.width}, rng, 0, 1, false);
    const std::string label = "config " + std::to_string(i);
    check_outputs(net.forward(images, Mode::kTrain), cfg, batch, c, label + " train");
    check_outputs(net.predict(images), cfg, batch, c, label + " infer");
    if (i < 3) {
      summary += (summary.empty() ? "" : ", ") + std::to_string(cfg.num_instruments) + "x" +
                 std::to_string(cfg.num_joints) + "@" + std::to_string(cfg.input_size.width) + "x" +
                 std::to_string(cfg.input_size.height);
    }
  }
  // Full-size network once: depth 5, 64 base features, 640x480.
  NetworkConfig full;
  full.num_instruments = 2;
  full.num_joints = 4;
  const auto t0 = std::chrono::steady_clock::now();
  const auto net = DetectorNet::build(full, 5);
  const auto image = test::random_tensor({1, 1, 480, 640}, rng, 0, 1, false);
  check_outputs(net.predict(image), full, 1, c, "full-size");
  return {c.ok(), "20 random configs (" + summary + ", ...) plus full-size 640x480 depth 5 (" +
                      std::to_string(net.parameter_count()) + " parameters, " + fmt("%.1f", seconds_since(t0)) +
                      " s)" + (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

// Mean composite loss over a dataset with the network in inference mode.
double dataset_loss(const DetectorNet& model, std::span<const Sample> samples, const TrainConfig& tc) {
  const auto& cfg = model.config();
  double total = 0;
  for (const auto& s : samples) {
    const std::vector<std::vector<double>> img{s.image.pixels};
    const auto out = model.predict(stack_images(img, cfg.input_channels, cfg.input_size));
    const auto scene = split_outputs(out.presence, out.maps, cfg.num_joints).front();
    total += composite_loss(scene, synthesize_targets(s.annotation, tc.sigma2), tc.loss).total;
  }
  return total / static_cast<double>(samples.size());
}

// Lowest reachable value of the same loss: every prediction equals its target.
double entropy_floor(std::span<const Sample> samples, const TrainConfig& tc) {
  double total = 0;
  for (const auto& s : samples) {
    const auto t = synthesize_targets(s.annotation, tc.sigma2);
    SceneOutput perfect{t.size, t.num_instruments, t.num_joints, t.presence, t.maps};
    total += composite_loss(perfect, t, tc.loss).total;
  }
  return total / static_cast<double>(samples.size());
}

EvalReport score(const DetectorNet& model, std::span<const Sample> samples, const DatasetSchema& schema,
                 std::size_t max_radius = 40) {
  const auto pred = predict_frames(model, samples);
  std::vector<SceneAnnotation> truth;
  for (const auto& s : samples) truth.push_back(s.annotation);
  return evaluate(pred, truth, schema.instruments, schema.joints, {max_radius, kDefaultPresenceThreshold, 15});
}

SyntheticSceneSpec scene_spec(std::uint64_t seed) {
  auto spec = default_synthetic_spec(2, 3, {64, 64}, seed);
  return spec;
}

NetworkConfig small_net(std::size_t base) {
  NetworkConfig n;
  n.depth = 3;
  n.base_features = base;
  n.input_size = {64, 64};
  n.num_instruments = 2;
  n.num_joints = 3;
  return n;
}

Outcome overfit_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_synthetic(scene_spec(505), 10);
  const auto samples = synthetic_samples(ds);
  auto model = DetectorNet::build(small_net(16), 5);
  TrainConfig tc;
  tc.adam.learning_rate = 1e-3;
  tc.batch_size = 2;
  tc.epochs = 60;  // 5 steps per epoch: 300 Adam steps
  tc.seed = 5;

  const double initial = dataset_loss(model, samples, tc);
  const auto result = train(model, samples, tc);
  const double final_loss = dataset_loss(model, samples, tc);
  const double floor = entropy_floor(samples, tc);
  const auto report = score(model, samples, ds.manifest.schema);
  const double secs = seconds_since(t0);

  Checks c;
  const double ratio = final_loss / initial;
  const double excess_ratio = (final_loss - floor) / (initial - floor);
  c.expect(result.state.steps_done == 300, "ran " + std::to_string(result.state.steps_done) + " steps");
  c.expect(ratio < 0.10, "final/initial loss " + fmt("%.3f", ratio) + " (the targets' entropy alone is " +
                             fmt("%.3f", floor / initial) + " of the initial loss)");
  c.expect(report.pooled_presence_rate() == 1.0, "presence accuracy " + fmt("%.4f", report.pooled_presence_rate()));
  const auto within3 = report.pooled_accuracy(3);
  c.expect(within3 && *within3 == 1.0, "joints within 3 px " + fmt("%.4f", within3.value_or(0)));
  c.expect(secs < 600, "runtime " + fmt("%.0f", secs) + " s");
  return {c.ok(), "300 steps, loss " + fmt("%.3f", initial) + " -> " + fmt("%.3f", final_loss) + " (ratio " +
                      fmt("%.3f", ratio) + ", entropy floor " + fmt("%.3f", floor) + ", excess over floor ratio " +
                      fmt("%.4f", excess_ratio) + "), presence " + fmt("%.3f", report.pooled_presence_rate()) +
                      ", within 3 px " + fmt("%.3f", within3.value_or(0)) + ", " + fmt("%.0f", secs) + " s" +
                      (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

Outcome synthetic_generalisation() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_synthetic(scene_spec(606), 500);
  const auto all = synthetic_samples(ds);
  const std::vector<Sample> train_set(all.begin(), all.begin() + 400), test_set(all.begin() + 400, all.end());
  auto model = DetectorNet::build(small_net(16), 6);
  TrainConfig tc;
  tc.adam.learning_rate = 1e-3;
  tc.batch_size = 8;
  tc.epochs = 30;
  tc.seed = 6;
  tc.hflip = true;
  tc.hflip_permutation = FlipPermutation::lateral(ds.manifest.schema.instruments, ds.manifest.schema.joints);
  train(model, train_set, tc);
  const auto report = score(model, test_set, ds.manifest.schema);
  const double secs = seconds_since(t0);

  Checks c;
  const double within15 = report.pooled_accuracy(15).value_or(0);
  const double presence = report.pooled_presence_rate();
  c.expect(within15 >= 0.90, "joints within 15 px " + fmt("%.4f", within15));
  c.expect(presence >= 0.95, "presence accuracy " + fmt("%.4f", presence));
  c.expect(secs < 7200, "runtime " + fmt("%.0f", secs) + " s");
  std::string per_joint;
  for (std::size_t n = 0; n < report.joints.size(); ++n) {
    double hit = 0, inc = 0;
    for (std::size_t m = 0; m < report.instruments.size(); ++m) {
      const auto& p = report.pair(m, n);
      if (!p.defined()) continue;
      hit += p.accuracy[15] * static_cast<double>(p.included);
      inc += static_cast<double>(p.included);
    }
    per_joint += (per_joint.empty() ? "" : ", ") + report.joints[n] + " " + fmt("%.3f", inc ? hit / inc : 0);
  }
  return {c.ok(), "400 train / 100 test, within 15 px " + fmt("%.3f", within15) + " (" + per_joint +
                      "), within 5 px " + fmt("%.3f", report.pooled_accuracy(5).value_or(0)) + ", presence " +
                      fmt("%.3f", presence) + ", " + fmt("%.0f", secs) + " s" + (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

std::vector<double> mirror_maps(const TargetStack& t) {
  std::vector<double> out(t.maps.size());
  const std::size_t w = t.size.width, h = t.size.height;
  for (std::size_t k = 0; k < t.num_instruments * t.num_joints; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(k * h + y) * w + x] = t.maps[(k * h + y) * w + (w - 1 - x)];
  return out;
}

// Keeps joints within the pixel-centre hull [0,w-1] x [0,h-1], where
// mirroring is its own inverse.
SceneAnnotation in_pixel_hull(SceneAnnotation a) {
  for (auto& row : a.joints)
    for (auto& j : row)
      if (j) {
        j->x = std::min(j->x, static_cast<double>(a.size.width - 1));
        j->y = std::min(j->y, static_cast<double>(a.size.height - 1));
      }
  return a;
}

Outcome flip_augmentation() {
  std::mt19937_64 rng(707);
  const std::vector<std::string> instruments{"left_clasper", "right_clasper"};
  const std::vector<std::string> joints{"left_tip", "right_tip", "shaft_end"};
  const auto lateral = FlipPermutation::lateral(instruments, joints);
  const auto ident = FlipPermutation::identity(2, 3);
  Checks c;
  c.expect(lateral.instruments == std::vector<std::size_t>{1, 0}, "claspers not swapped");
  c.expect(lateral.joints == std::vector<std::size_t>{1, 0, 2}, "tips not swapped");
  double worst = 0;
  std::size_t swapped_presence = 0;
  for (int i = 0; i < 200; ++i) {
    const ImageSize size{16 + static_cast<std::size_t>(i % 17), 12 + static_cast<std::size_t>(i % 9)};
    const auto a = in_pixel_hull(test::random_annotation(size, 2, 3, rng, i % 2 == 0, 0.5));

    for (const auto* perm : {&ident, &lateral}) {
      const auto twice = flip_annotation(flip_annotation(a, FlipAxis::kHorizontal, *perm), FlipAxis::kHorizontal, *perm);
      // Integral coordinates come back bit-exactly; others within rounding.
      const double tol = i % 2 == 0 ? 0.0 : 1e-12;
      bool same = twice.presence == a.presence;
      for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t n = 0; n < 3; ++n) {
          const auto &p = a.joints[m][n], &q = twice.joints[m][n];
          same = same && p.has_value() == q.has_value() &&
                 (!p || (std::abs(p->x - q->x) <= tol && std::abs(p->y - q->y) <= tol));
        }
      c.expect(same, "hflip twice is not the identity (annotation " + std::to_string(i) + ")");
    }

    const auto plain = synthesize_targets(a);
    const auto mirrored = mirror_maps(plain);
    const auto flipped = synthesize_targets(flip_annotation(a, FlipAxis::kHorizontal, ident));
    for (std::size_t k = 0; k < mirrored.size(); ++k) worst = std::max(worst, std::abs(flipped.maps[k] - mirrored[k]));
    c.expect(flipped.presence == plain.presence, "identity flip changed presence");

    // With the lateral table, map (m,n) moves to (perm m, perm n) and presence follows.
    const auto swapped_ann = flip_annotation(a, FlipAxis::kHorizontal, lateral);
    const auto swapped = synthesize_targets(swapped_ann);
    const std::size_t hw = size.pixels();
    for (std::size_t m = 0; m < 2; ++m) {
      c.expect(swapped_ann.presence[lateral.instruments[m]] == a.presence[m], "presence not permuted");
      for (std::size_t n = 0; n < 3; ++n) {
        const std::size_t from = m * 3 + n, to = lateral.instruments[m] * 3 + lateral.joints[n];
        for (std::size_t p = 0; p < hw; ++p) {
          worst = std::max(worst, std::abs(swapped.maps[to * hw + p] - mirrored[from * hw + p]));
        }
      }
    }
    swapped_presence += a.presence[0] != a.presence[1];
  }
  c.expect(worst <= 1e-12, "mirrored targets differ by " + fmt("%.2e", worst));
  c.expect(swapped_presence > 0, "no annotation exercised a presence swap");

  // Image and annotation stay registered: the flipped image shows the
  // instrument where the flipped annotation says it is.
  auto spec = scene_spec(708);
  spec.noise_level = 0;
  spec.background_variation = 0;
  const auto ds = generate_synthetic(spec, 20);
  const auto schema = ds.manifest.schema;
  const auto perm = FlipPermutation::lateral(schema.instruments, schema.joints);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& ann = ds.manifest.entries[i].annotation;
    const auto [img, fa] = augment(ds.images[i], ann, FlipAxis::kHorizontal, perm);
    c.expect(img == flip_horizontal(ds.images[i]), "augment image is not the mirror");
    for (std::size_t m = 0; m < fa.num_instruments(); ++m) {
      if (!fa.presence[m]) continue;
      const Point p = *fa.joints[m][2];  // shaft_end
      c.expect(img.at(0, static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)) > 0.5,
               "flipped shaft end not on the instrument");
    }
  }
  return {c.ok(), "200 annotations: hflip twice = identity (bit-exact for integral joints, 1e-12 otherwise), mirrored targets within " + fmt("%.1e", worst) + ", " +
                      std::to_string(swapped_presence) + " presence swaps checked, 20 rendered images registered" +
                      (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

bool bit_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

Outcome determinism_and_persistence() {
  const auto ds = generate_synthetic(scene_spec(808), 12);
  const auto samples = synthetic_samples(ds);
  TrainConfig tc;
  tc.adam.learning_rate = 1e-3;
  tc.batch_size = 4;
  tc.epochs = 3;
  tc.seed = 8;
  tc.hflip = true;
  tc.vflip = true;
  tc.hflip_permutation = FlipPermutation::lateral(ds.manifest.schema.instruments, ds.manifest.schema.joints);

  auto a = DetectorNet::build(small_net(8), 8);
  auto b = DetectorNet::build(small_net(8), 8);
  const auto ra = train(a, samples, tc), rb = train(b, samples, tc);
  Checks c;
  c.expect(ra.history.size() == rb.history.size() && !ra.history.empty(), "loss logs differ in length");
  for (std::size_t i = 0; i < std::min(ra.history.size(), rb.history.size()); ++i) {
    c.expect(bit_equal(ra.history[i].loss, rb.history[i].loss), "loss differs at step " + std::to_string(i + 1));
  }

  const Checkpoint ck = make_checkpoint(a, ra.state, tc.seed);
  const auto bytes = serialize_checkpoint(ck);
  c.expect(bytes == serialize_checkpoint(make_checkpoint(b, rb.state, tc.seed)), "identical runs give different checkpoints");

  const auto dir = fs::path(IPOSE_TEST_TMP) / "acceptance";
  fs::create_directories(dir);
  save_checkpoint(ck, dir / "determinism.ckpt");
  const Checkpoint back = load_checkpoint(dir / "determinism.ckpt");
  c.expect(back == ck, "checkpoint changed on disk round trip");
  c.expect(serialize_checkpoint(back) == bytes, "re-serialised bytes differ");

  const auto reloaded = DetectorNet::from_checkpoint(back);
  std::vector<std::vector<double>> images;
  for (const auto& s : samples) images.push_back(s.image.pixels);
  const auto input = stack_images(images, 1, {64, 64});
  const auto p1 = a.predict(input), p2 = reloaded.predict(input);
  const auto same = [](std::span<const double> x, std::span<const double> y) {
    return x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin(), bit_equal);
  };
  c.expect(same(p1.presence.data(), p2.presence.data()), "reloaded presence differs");
  c.expect(same(p1.maps.data(), p2.maps.data()), "reloaded maps differ");

  // Training resumed from the checkpoint continues exactly like the run would have.
  TrainConfig longer = tc;
  longer.epochs = 5;
  auto resumed = DetectorNet::from_checkpoint(back);
  const auto rr = train(resumed, samples, longer, restore_train_state(back, resumed));
  auto straight = DetectorNet::build(small_net(8), 8);
  const auto rs = train(straight, samples, longer);
  c.expect(serialize_checkpoint(make_checkpoint(resumed, rr.state, tc.seed)) ==
               serialize_checkpoint(make_checkpoint(straight, rs.state, tc.seed)),
           "resumed run diverges from the uninterrupted run");

  return {c.ok(), std::to_string(ra.history.size()) + " logged steps bit-identical, checkpoint " +
                      std::to_string(bytes.size()) + " bytes round-trips bit-exactly, reloaded inference and resumed "
                      "training match" + (c.ok() ? "" : "; " + c.failures())};
}

// ---------------------------------------------------------------------------

Outcome evaluation_oracle() {
  std::mt19937_64 rng(909);
  std::uniform_int_distribution<int> frames(1, 30), m_count(1, 3), n_count(1, 4), spread(0, 25);
  std::bernoulli_distribution flip(0.15);
  Checks c;
  std::size_t compared = 0;
  for (int set = 0; set < 50; ++set) {
    const auto m = static_cast<std::size_t>(m_count(rng)), n = static_cast<std::size_t>(n_count(rng));
    const ImageSize size{40, 32};
    const int s = spread(rng);
    std::uniform_int_distribution<int> off(-s, s);
    std::vector<SceneAnnotation> truth;
    std::vector<FramePrediction> pred;
    for (int f = frames(rng); f > 0; --f) {
      truth.push_back(test::random_annotation(size, m, n, rng, set % 2 == 0, 0.6));
      FramePrediction fp;
      for (std::size_t i = 0; i < m; ++i) {
        InstrumentEstimate e{i, flip(rng) != truth.back().presence[i], 0.5, {}};
        for (std::size_t j = 0; j < n; ++j) {
          const auto& gt = truth.back().joints[i][j];
          const double bx = gt ? gt->x : 20, by = gt ? gt->y : 16;
          e.joints.push_back({static_cast<std::size_t>(std::clamp<double>(std::round(bx) + off(rng), 0, 39)),
                              static_cast<std::size_t>(std::clamp<double>(std::round(by) + off(rng), 0, 31))});
        }
        fp.push_back(e);
      }
      pred.push_back(fp);
    }
    std::vector<std::string> inst(m), jn(n);
    for (std::size_t i = 0; i < m; ++i) inst[i] = "i" + std::to_string(i);
    for (std::size_t j = 0; j < n; ++j) jn[j] = "j" + std::to_string(j);
    const auto report = evaluate(pred, truth, inst, jn, {40, 0.5, 15});
    const auto oracle = test::recount(pred, truth, 40);
    for (std::size_t k = 0; k < m * n; ++k) {
      const auto& p = report.pairs[k];
      c.expect(p.included == oracle.included[k], "included count differs");
      c.expect(p.included + p.excluded == truth.size(), "frames lost");
      if (!p.defined()) {
        c.expect(p.accuracy.empty() && !p.mean_error, "undefined pair reports values");
        continue;
      }
      for (std::size_t r = 0; r <= 40; ++r) {
        ++compared;
        c.expect(p.accuracy[r] == static_cast<double>(oracle.hits[k][r]) / static_cast<double>(p.included),
                 "curve differs at r=" + std::to_string(r));
        if (r) c.expect(p.accuracy[r] >= p.accuracy[r - 1], "curve not monotone");
      }
      c.expect(std::abs(*p.mean_error - oracle.error_sums[k] / static_cast<double>(p.included)) < 1e-12,
               "mean error differs");
    }
    for (std::size_t i = 0; i < m; ++i) {
      c.expect(report.presence_rates[i] ==
                   static_cast<double>(oracle.presence_correct[i]) / static_cast<double>(truth.size()),
               "presence rate differs");
    }
    if (set == 0) {
      const auto dir = fs::path(IPOSE_TEST_TMP) / "acceptance" / "report";
      emit_report(report, dir, false);
      std::ifstream in(dir / "summary.txt");
      std::stringstream text;
      text << in.rdbuf();
      c.expect(text.str().find("accuracy@15px=") != std::string::npos, "summary lacks the 15 px value");
    }
  }
  return {c.ok(), "50 random sets, " + std::to_string(compared) +
                      " curve points equal the recount, curves monotone, summary reports accuracy@15px" +
                      (c.ok() ? "" : "; " + c.failures())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_correctness},    {2, loss_decomposition},       {3, target_validity},
      {4, architecture_shapes},     {5, overfit_smoke},            {6, synthetic_generalisation},
      {7, flip_augmentation},       {8, determinism_and_persistence}, {9, evaluation_oracle},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
