#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pddpm/nn/ops.hpp"
#include "pddpm/nn/param_store.hpp"
#include "pddpm/nn/tape.hpp"

namespace pddpm::nn {

struct UNetSpec {
  int in_channels = 4;
  int out_channels = 1;
  int base_width = 32;
  std::vector<int> multipliers{1, 2, 4};
  // Sinusoidal embedding width; 0 builds a network without time conditioning.
  int time_dim = 32;
  int groups = 8;

  int levels() const { return static_cast<int>(multipliers.size()); }
  int width(int level) const { return base_width * multipliers.at(static_cast<std::size_t>(level)); }
  // Spatial extents must be divisible by this.
  int spatial_divisor() const { return 1 << (levels() - 1); }

  bool operator==(const UNetSpec&) const = default;
};

// Throws ArgumentError on an unusable spec (non-divisible group counts, ...).
void validate(const UNetSpec& spec);

// Encoder/decoder U-Net: residual blocks with GroupNorm + SiLU, stride-2
// convolutions down, nearest-neighbour upsampling plus skip concatenation up.
// When time_dim > 0 a sinusoidal embedding passes through a two-layer MLP and
// is projected into every residual block.
class UNet {
 public:
  explicit UNet(UNetSpec spec);

  const UNetSpec& spec() const { return spec_; }

  // Adds every parameter to `params` with deterministic initialization.
  void init_params(ParamStore& params, std::uint64_t seed) const;

  // x [N, in_channels, H, W] -> [N, out_channels, H, W]. `timesteps` has N
  // entries when time conditioning is enabled, otherwise it is ignored.
  Var forward(Tape& tape, const ParamStore& params, Var x, std::span<const int> timesteps) const;

 private:
  UNetSpec spec_;
};

}  // namespace pddpm::nn
