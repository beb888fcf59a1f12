#pragma once

#include <span>

#include "pddpm/tensor.hpp"

namespace pddpm::nn {

// Sinusoidal timestep embedding of width `dim` (even): the first half holds
// sin(t * f_i), the second cos(t * f_i), with f_i = 10000^(-i / (dim/2)).
// Requires t >= 1.
Tensor time_embedding(int t, int dim);

// Row-stacked embeddings [N, dim] for a batch of timesteps.
Tensor time_embedding(std::span<const int> timesteps, int dim);

}  // namespace pddpm::nn
