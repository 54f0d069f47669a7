#include "ipose/scene_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ipose/error.hpp"

namespace ipose {

namespace {

double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

bool inside_clamp(double p) { return p > kLogClamp && p < 1.0 - kLogClamp; }

// Normalised 1-D Gaussian profile along one axis. The pairwise sum
// (a[i] + a[n-1-i]) is identical for a mirrored profile, which keeps the
// normalisation exactly mirror-symmetric.
std::vector<double> gaussian_profile(std::size_t n, double centre, double sigma2) {
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - centre;
    a[i] = std::exp(-d * d / (2.0 * sigma2));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n / 2; ++i) total += a[i] + a[n - 1 - i];
  if (n % 2 == 1) total += a[n / 2];
  for (auto& v : a) v /= total;
  return a;
}

void check_output_layout(const Tensor& presence, const Tensor& maps, std::size_t num_joints) {
  if (presence.rank() != 2 || maps.rank() != 4) {
    throw ShapeError("scene outputs must be presence [B,M] and maps [B,M*N,H,W], got " +
                     shape_string(presence.shape()) + " and " + shape_string(maps.shape()));
  }
  if (presence.dim(0) != maps.dim(0) || num_joints == 0 ||
      maps.dim(1) != presence.dim(1) * num_joints) {
    throw ShapeError("scene outputs disagree: presence " + shape_string(presence.shape()) +
                     ", maps " + shape_string(maps.shape()) + ", joints " +
                     std::to_string(num_joints));
  }
}

}  // namespace

SceneAnnotation SceneAnnotation::empty(ImageSize size, std::size_t instruments,
                                       std::size_t joints) {
  SceneAnnotation a;
  a.size = size;
  a.presence.assign(instruments, false);
  a.joints.assign(instruments, std::vector<std::optional<Point>>(joints));
  return a;
}

void SceneAnnotation::validate() const {
  if (size.width == 0 || size.height == 0) throw DataError("annotation: empty image size");
  if (joints.size() != presence.size()) {
    throw DataError("annotation: " + std::to_string(presence.size()) +
                    " presence flags but joints for " + std::to_string(joints.size()) +
                    " instruments");
  }
  const std::size_t n_joints = num_joints();
  for (std::size_t m = 0; m < presence.size(); ++m) {
    if (joints[m].size() != n_joints) {
      throw DataError("annotation: instrument " + std::to_string(m) + " has " +
                      std::to_string(joints[m].size()) + " joint slots, expected " +
                      std::to_string(n_joints));
    }
    for (std::size_t n = 0; n < n_joints; ++n) {
      const auto& j = joints[m][n];
      if (!presence[m]) {
        if (j) {
          throw DataError("annotation: absent instrument " + std::to_string(m) +
                          " carries joint " + std::to_string(n));
        }
        continue;
      }
      if (!j) {
        throw DataError("annotation: present instrument " + std::to_string(m) +
                        " is missing joint " + std::to_string(n));
      }
      const bool inside = std::isfinite(j->x) && std::isfinite(j->y) && j->x >= 0.0 &&
                          j->y >= 0.0 && j->x < static_cast<double>(size.width) &&
                          j->y < static_cast<double>(size.height);
      if (!inside) {
        std::ostringstream os;
        os << "annotation: joint " << n << " of instrument " << m << " at (" << j->x << ", "
           << j->y << ") lies outside the " << size.width << "x" << size.height << " image";
        throw DataError(os.str());
      }
    }
  }
}

std::span<const double> TargetStack::map(std::size_t m, std::size_t n) const {
  const std::size_t px = size.pixels();
  return std::span<const double>(maps).subspan((m * num_joints + n) * px, px);
}

std::span<const double> SceneOutput::map(std::size_t m, std::size_t n) const {
  const std::size_t px = size.pixels();
  return std::span<const double>(maps).subspan((m * num_joints + n) * px, px);
}

std::vector<SceneOutput> split_outputs(const Tensor& presence, const Tensor& maps,
                                       std::size_t num_joints) {
  check_output_layout(presence, maps, num_joints);
  const std::size_t batch = presence.dim(0);
  const std::size_t m = presence.dim(1);
  const ImageSize size{maps.dim(3), maps.dim(2)};
  const std::size_t per_image = maps.dim(1) * size.pixels();
  std::vector<SceneOutput> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    auto& o = out[b];
    o.size = size;
    o.num_instruments = m;
    o.num_joints = num_joints;
    o.presence.assign(presence.data().begin() + b * m, presence.data().begin() + (b + 1) * m);
    o.maps.assign(maps.data().begin() + b * per_image, maps.data().begin() + (b + 1) * per_image);
  }
  return out;
}

std::vector<double> gaussian_map(ImageSize size, Point centre, double sigma2) {
  if (!(sigma2 > 0.0)) throw ConfigError("gaussian_map: sigma2 must be positive");
  const auto px = gaussian_profile(size.width, centre.x, sigma2);
  const auto py = gaussian_profile(size.height, centre.y, sigma2);
  std::vector<double> map(size.pixels());
  for (std::size_t y = 0; y < size.height; ++y) {
    for (std::size_t x = 0; x < size.width; ++x) map[y * size.width + x] = py[y] * px[x];
  }
  return map;
}

std::vector<double> uniform_map(ImageSize size) {
  return std::vector<double>(size.pixels(), 1.0 / static_cast<double>(size.pixels()));
}

TargetStack synthesize_targets(const SceneAnnotation& annotation, double sigma2) {
  if (!(sigma2 > 0.0)) throw ConfigError("synthesize_targets: sigma2 must be positive");
  annotation.validate();
  TargetStack t;
  t.size = annotation.size;
  t.num_instruments = annotation.num_instruments();
  t.num_joints = annotation.num_joints();
  t.sigma2 = sigma2;
  t.presence.resize(t.num_instruments);
  t.maps.reserve(t.num_instruments * t.num_joints * t.size.pixels());
  const auto uniform = uniform_map(t.size);
  for (std::size_t m = 0; m < t.num_instruments; ++m) {
    t.presence[m] = annotation.presence[m] ? 1.0 : 0.0;
    for (std::size_t n = 0; n < t.num_joints; ++n) {
      if (annotation.presence[m]) {
        const auto g = gaussian_map(t.size, *annotation.joints[m][n], sigma2);
        t.maps.insert(t.maps.end(), g.begin(), g.end());
      } else {
        t.maps.insert(t.maps.end(), uniform.begin(), uniform.end());
      }
    }
  }
  return t;
}

double presence_ce(double target, double prob) {
  const double p = clamp_prob(prob);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double map_ce(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size()) {
    throw ShapeError("map_ce: target has " + std::to_string(target.size()) +
                     " pixels, prediction " + std::to_string(predicted.size()));
  }
  double h = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0) h -= target[i] * std::log(clamp_prob(predicted[i]));
  }
  return h;
}

LossTerms composite_loss(const SceneOutput& output, const TargetStack& targets,
                         const LossOptions& options) {
  if (output.num_instruments != targets.num_instruments ||
      output.num_joints != targets.num_joints || output.size != targets.size) {
    throw ShapeError("composite_loss: output and target layouts differ");
  }
  LossTerms terms;
  for (std::size_t m = 0; m < targets.num_instruments; ++m) {
    terms.presence += presence_ce(targets.presence[m], output.presence[m]);
    if (targets.presence[m] == 0.0 && options.absent_maps == AbsentMapPolicy::kDrop) continue;
    for (std::size_t n = 0; n < targets.num_joints; ++n) {
      terms.maps += map_ce(targets.map(m, n), output.map(m, n));
    }
  }
  terms.total = options.presence_weight * terms.presence + terms.maps;
  return terms;
}

CompositeLoss composite_loss(const Tensor& presence, const Tensor& maps,
                             std::span<const TargetStack> targets, const LossOptions& options) {
  if (targets.empty()) throw ShapeError("composite_loss: no targets");
  const std::size_t num_joints = targets.front().num_joints;
  check_output_layout(presence, maps, num_joints);
  const std::size_t batch = presence.dim(0);
  const std::size_t num_inst = presence.dim(1);
  const ImageSize size{maps.dim(3), maps.dim(2)};
  if (targets.size() != batch) {
    throw ShapeError("composite_loss: " + std::to_string(targets.size()) + " targets for batch " +
                     std::to_string(batch));
  }
  for (const auto& t : targets) {
    if (t.num_instruments != num_inst || t.num_joints != num_joints || t.size != size) {
      throw ShapeError("composite_loss: target layout does not match network outputs");
    }
  }

  const auto outputs = split_outputs(presence, maps, num_joints);
  LossTerms mean_terms;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto t = composite_loss(outputs[b], targets[b], options);
    mean_terms.presence += t.presence;
    mean_terms.maps += t.maps;
    mean_terms.total += t.total;
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  mean_terms.presence *= inv_batch;
  mean_terms.maps *= inv_batch;
  mean_terms.total *= inv_batch;

  // Targets are copied into the closure; the caller's span may not outlive it.
  std::vector<TargetStack> held(targets.begin(), targets.end());
  Tensor loss = Tensor::from_op(
      {}, {mean_terms.total}, {presence, maps},
      [presence, maps, held = std::move(held), options, batch, num_inst, num_joints, size,
       inv_batch](std::span<const double> g, std::span<const double>) {
        const double scale = g[0] * inv_batch;
        if (presence.requires_grad()) {
          auto gp = presence.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t m = 0; m < num_inst; ++m) {
              const double p = presence.at(b * num_inst + m);
              if (!inside_clamp(p)) continue;
              const double t = held[b].presence[m];
              gp[b * num_inst + m] +=
                  scale * options.presence_weight * (-t / p + (1.0 - t) / (1.0 - p));
            }
          }
        }
        if (!maps.requires_grad()) return;
        auto gq = maps.grad_buffer();
        const std::size_t px = size.pixels();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t m = 0; m < num_inst; ++m) {
            if (held[b].presence[m] == 0.0 && options.absent_maps == AbsentMapPolicy::kDrop) {
              continue;
            }
            for (std::size_t n = 0; n < num_joints; ++n) {
              const auto target = held[b].map(m, n);
              const std::size_t base = ((b * num_inst + m) * num_joints + n) * px;
              for (std::size_t i = 0; i < px; ++i) {
                const double q = maps.at(base + i);
                if (target[i] == 0.0 || !inside_clamp(q)) continue;
                gq[base + i] -= scale * target[i] / q;
              }
            }
          }
        }
      },
      "composite_loss");
  return {std::move(loss), mean_terms};
}

Pixel argmax_pixel(std::span<const double> map, ImageSize size) {
  if (map.size() != size.pixels() || map.empty()) {
    throw ShapeError("argmax_pixel: map of " + std::to_string(map.size()) +
                     " values for a " + std::to_string(size.width) + "x" +
                     std::to_string(size.height) + " image");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < map.size(); ++i) {
    if (map[i] > map[best]) best = i;
  }
  return {best % size.width, best / size.width};
}

std::vector<InstrumentEstimate> extract_joints(const SceneOutput& output,
                                               double presence_threshold) {
  if (!(presence_threshold > 0.0 && presence_threshold < 1.0)) {
    throw ConfigError("extract_joints: presence threshold must lie in (0, 1)");
  }
  std::vector<InstrumentEstimate> result(output.num_instruments);
  for (std::size_t m = 0; m < output.num_instruments; ++m) {
    auto& e = result[m];
    e.instrument = m;
    e.probability = output.presence[m];
    e.present = output.presence[m] >= presence_threshold;
    e.joints.reserve(output.num_joints);
    for (std::size_t n = 0; n < output.num_joints; ++n) {
      e.joints.push_back(argmax_pixel(output.map(m, n), output.size));
    }
  }
  return result;
}

}  // namespace ipose
