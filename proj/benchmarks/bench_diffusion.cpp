#include <benchmark/benchmark.h>

#include "pddpm/diffusion.hpp"
#include "pddpm/phantom.hpp"

using namespace pddpm;

namespace {

void BM_ReverseStep(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  UNetDenoiser model(UNetDenoiser::default_spec(3), 1);
  const auto schedule = NoiseSchedule::linear(100, 1e-4, 0.02);
  const auto condition = full_condition(Volume(1, {size, size}, 0.0f), coordinate_grid(std::vector<int>{size, size}));
  Rng rng(3);
  Volume x(1, {size, size});
  rng.fill_normal(x.data());
  for (auto _ : state) benchmark::DoNotOptimize(reverse_step(model, x, 50, condition, schedule, rng));
}
BENCHMARK(BM_ReverseStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Phantom(benchmark::State& state) {
  const PhantomSpec spec;
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_phantom(spec, seed++));
}
BENCHMARK(BM_Phantom);

}  // namespace

BENCHMARK_MAIN();
