#include "pddpm/nn/time_embedding.hpp"

#include <cmath>
#include <string>

#include "pddpm/error.hpp"

namespace pddpm::nn {

namespace {

void fill_embedding(int t, int dim, float* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = t * freq;
    out[i] = static_cast<float>(std::sin(arg));
    out[half + i] = static_cast<float>(std::cos(arg));
  }
}

void check(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ArgumentError("time_embedding: dim must be even and >= 2, got " + std::to_string(dim));
  if (t < 1) throw ArgumentError("time_embedding: timestep must be >= 1, got " + std::to_string(t));
}

}  // namespace

Tensor time_embedding(int t, int dim) {
  check(t, dim);
  Tensor out({dim});
  fill_embedding(t, dim, out.ptr());
  return out;
}

Tensor time_embedding(std::span<const int> timesteps, int dim) {
  if (timesteps.empty()) throw ArgumentError("time_embedding: empty timestep batch");
  Tensor out({static_cast<int>(timesteps.size()), dim});
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    check(timesteps[n], dim);
    fill_embedding(timesteps[n], dim, out.ptr() + n * static_cast<std::size_t>(dim));
  }
  return out;
}

}  // namespace pddpm::nn
