#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>

namespace pddpm {

// SplitMix64 finalizer over (root, stream, index). Used to derive independent
// per-case / per-step / per-sample seeds from one root seed.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0);

// Portable random source. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions are implemented here
// so results are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of precision.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [lo, hi]. Consumes no randomness when lo == hi.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();

  void fill_normal(std::span<float> out);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace pddpm
