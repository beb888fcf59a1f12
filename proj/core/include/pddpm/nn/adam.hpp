#pragma once

#include "pddpm/nn/param_store.hpp"

namespace pddpm::nn {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps_hat = 1e-8f;

  bool operator==(const AdamConfig&) const = default;
};

// One bias-corrected Adam update. Gradient keys must be a subset of the
// parameter names; entries without a gradient are treated as zero-gradient.
// Non-finite gradient values raise NumericalError naming the parameter and
// leave the store untouched.
void adam_step(ParamStore& params, const Gradients& grads, const AdamConfig& config);

}  // namespace pddpm::nn
