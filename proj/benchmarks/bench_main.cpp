#include <benchmark/benchmark.h>

#include <random>

#include "lap/nn/networks.hpp"
#include "lap/render/renderer.hpp"
#include "lap/synth/synth.hpp"
#include "lap/tensor/ops.hpp"

using namespace lap;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Args: spatial size, channels in/out, stride.
void BM_Conv2dForward(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0)), c = static_cast<int>(state.range(1));
  const int stride = static_cast<int>(state.range(2));
  const Tensor x = random_tensor({8, c, s, s}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(ops::conv2d(t.constant(x), t.constant(w), t.constant(b), stride, 1).value().data());
  }
}
BENCHMARK(BM_Conv2dForward)->Args({32, 16, 1})->Args({32, 32, 2})->Args({64, 16, 2})->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0)), c = static_cast<int>(state.range(1));
  const Tensor x = random_tensor({8, c, s, s}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    Tape t;
    const Var y = ops::conv2d(t.leaf(x), t.leaf(w), t.leaf(b), 1, 1);
    benchmark::DoNotOptimize(t.backward(ops::sum(y)));
  }
}
BENCHMARK(BM_Conv2dBackward)->Args({32, 16})->Unit(benchmark::kMillisecond);

void BM_Render(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0));
  const bool grad = state.range(1) != 0;
  const synth::Scene scene = synth::generate_identity(5, s);
  const render::Camera cam(s, s);
  const Tensor light = render::Light{}.to_tensor();
  const Tensor pose = render::Pose{20.0, 5.0, 0.0, 0.0, 0.0, 0.0}.to_tensor();
  for (auto _ : state) {
    Tape t;
    auto in = [&](const Tensor& v) { return grad ? t.leaf(v) : t.constant(v); };
    const auto out = render::render(in(scene.albedo), in(scene.depth), in(light), in(pose), cam);
    if (grad) {
      benchmark::DoNotOptimize(t.backward(ops::sum(out.image)));
    } else {
      benchmark::DoNotOptimize(out.image.value().data());
    }
  }
}
BENCHMARK(BM_Render)->Args({32, 0})->Args({32, 1})->Args({64, 0})->Args({64, 1})->Unit(benchmark::kMillisecond);

void BM_CanonicalFace(benchmark::State& state) {
  nn::NetConfig cfg;
  cfg.image_size = static_cast<int>(state.range(0));
  const nn::ParamStore store = nn::init_parameters(cfg, 1);
  const Tensor images = random_tensor({6, 3, cfg.image_size, cfg.image_size}, 4);
  for (auto _ : state) {
    Tape t;
    const nn::Binding p(t, store);
    benchmark::DoNotOptimize(nn::canonical_face(p, cfg, t.constant(images)).depth.value().data());
  }
}
BENCHMARK(BM_CanonicalFace)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
