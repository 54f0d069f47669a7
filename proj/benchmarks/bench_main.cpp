#include <benchmark/benchmark.h>

#include <random>

#include "ipose/detector_net.hpp"
#include "ipose/ops.hpp"
#include "ipose/synthetic.hpp"
#include "ipose/training.hpp"

using namespace ipose;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return Tensor::from_data(shape, std::move(v), grad);
}

// Args: channels in/out, spatial side.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  const auto x = random_tensor({2, c, s, s}, 1);
  const auto k = random_tensor({c, c, 3, 3}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, Tensor()).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * c * c * 9 * s * s * 2));
}
BENCHMARK(BM_Conv2dForward)->Args({16, 64})->Args({64, 64})->Args({64, 160})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto s = static_cast<std::size_t>(state.range(1));
  auto x = random_tensor({2, c, s, s}, 1, true);
  auto k = random_tensor({c, c, 3, 3}, 2, true);
  for (auto _ : state) {
    x.zero_grad();
    k.zero_grad();
    sum(conv2d(x, k, Tensor())).backward();
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({16, 64})->Args({64, 64})->Unit(benchmark::kMillisecond);

NetworkConfig small_net() {
  NetworkConfig c;
  c.depth = 3;
  c.base_features = 16;
  c.input_size = {64, 64};
  c.num_instruments = 2;
  c.num_joints = 3;
  return c;
}

void BM_NetworkForward(benchmark::State& state) {
  auto cfg = small_net();
  if (state.range(0) == 1) {
    cfg = NetworkConfig{};  // full-size: depth 5, 64 features, 640x480
    cfg.num_instruments = 2;
  }
  const auto net = DetectorNet::build(cfg, 1);
  const auto img = random_tensor({1, 1, cfg.input_size.height, cfg.input_size.width}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(img).maps.data().data());
}
BENCHMARK(BM_NetworkForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  const auto cfg = small_net();
  const auto ds = generate_synthetic(default_synthetic_spec(2, 3, cfg.input_size, 4), 8);
  const auto samples = synthetic_samples(ds);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 1;
  tc.adam.learning_rate = 1e-3;
  for (auto _ : state) {
    auto net = DetectorNet::build(cfg, 1);
    benchmark::DoNotOptimize(train(net, samples, tc).history.back().loss);
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
