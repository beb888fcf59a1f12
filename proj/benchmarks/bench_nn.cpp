#include <benchmark/benchmark.h>

#include "pddpm/diffusion.hpp"
#include "pddpm/nn/ops.hpp"
#include "pddpm/rng.hpp"

using namespace pddpm;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data());
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  const Tensor x = random_tensor({8, c, s, s}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2);
  const Tensor b({c}, 0.0f);
  for (auto _ : state) {
    nn::Tape tape;
    auto xv = tape.input(x);
    auto wv = tape.parameter("w", w);
    auto bv = tape.parameter("b", b);
    auto y = nn::conv2d(tape, xv, wv, bv, {1, 1});
    auto loss = nn::sum(tape, y);
    nn::ParamStore params;
    params.add("w", w);
    params.add("b", b);
    benchmark::DoNotOptimize(tape.backward(loss, params));
  }
  state.counters["GFLOP/s"] = benchmark::Counter(3.0 * 2.0 * 8 * c * c * 9 * s * s * 1e-9,
                                                 benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({32, 32})->Args({64, 16})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_DenoiserTrainStep(benchmark::State& state) {
  const int patch = static_cast<int>(state.range(0));
  UNetDenoiser model(UNetDenoiser::default_spec(3), 1);
  const auto schedule = NoiseSchedule::linear(1000, 1e-4, 0.02);
  const Volume image(1, {64, 64}, 0.0f);
  Volume mask(1, {64, 64}, 0.0f);
  const std::vector<TrainingPair> pairs{{image, mask}};
  const auto grid = coordinate_grid(std::vector<int>{64, 64});
  Rng rng(7);
  for (auto _ : state) {
    const auto batch = draw_batch(pairs, 8, grid, PatchOptions{{patch, patch}}, CropMode::kPatch, schedule, rng);
    const auto stats = train_step(model, batch, schedule, nn::AdamConfig{});
    state.counters["activations"] = static_cast<double>(stats.activation_elements);
  }
}
BENCHMARK(BM_DenoiserTrainStep)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
