#pragma once

#include <span>
#include <string>
#include <vector>

#include "pddpm/rng.hpp"
#include "pddpm/schedule.hpp"
#include "pddpm/volume.hpp"

namespace pddpm {

// Normalized global coordinates: channel k holds -1 + 2 i / (extent_k - 1)
// at index i along axis k, constant along the other axes.
struct CoordinateGrid {
  Volume channels;

  const std::vector<int>& extents() const { return channels.extents(); }
};

// Throws ArgumentError when any extent is < 2.
CoordinateGrid coordinate_grid(std::span<const int> extents);

// Value of the coordinate channel for `axis` at `index`.
double coordinate_value(int index, int extent);

// One denoiser training example cut from a single image.
struct PatchSample {
  Volume noisy_patch;   // 1 channel
  Volume target_noise;  // 1 channel
  Volume mask_patch;    // 1 channel, values in {0, 1}
  Volume coord_patch;   // D channels
  int t = 0;
  std::vector<int> origin;
};

// Condition channel order, a public contract baked into checkpoints:
// denoiser input = [x_t, mask, coord_axis_0, ..., coord_axis_{D-1}].
std::string channel_order_contract(int spatial_rank);

// [mask, coord_axis_0, ..., coord_axis_{D-1}]; extents must match.
Volume assemble_condition(const Volume& mask_patch, const Volume& coord_patch);

// Whole-image condition used at sampling time.
Volume full_condition(const Volume& mask, const CoordinateGrid& grid);

struct PatchOptions {
  std::vector<int> size;
  // Off by default. When on, half of the draws pick uniformly among origins
  // whose mask patch contains at least one nodule pixel.
  bool oversample_nonempty = false;
};

// Uniform over all valid origins (or mask-biased, see PatchOptions). Consumes
// no randomness when the patch covers the whole image.
std::vector<int> sample_origin(const Volume& mask, const PatchOptions& options, Rng& rng);

// Crops image/mask/grid at one random origin, draws eps ~ N(0, I) at patch
// shape and noises the image crop to step t with the closed-form marginal.
PatchSample random_patch(const Volume& image, const Volume& mask, const CoordinateGrid& grid,
                         const PatchOptions& options, int t, const NoiseSchedule& schedule, Rng& rng);

// The same example without cropping (plain whole-image DDPM training).
PatchSample full_image_sample(const Volume& image, const Volume& mask, const CoordinateGrid& grid, int t,
                              const NoiseSchedule& schedule, Rng& rng);

struct TrainingPair {
  Volume image;
  Volume mask;
};

enum class CropMode { kPatch, kFullImage };

// Draws `batch_size` examples: per example a case index, a timestep uniform on
// [1, T], then the crop (kPatch) and the noise.
std::vector<PatchSample> draw_batch(std::span<const TrainingPair> cases, int batch_size, const CoordinateGrid& grid,
                                    const PatchOptions& options, CropMode mode, const NoiseSchedule& schedule, Rng& rng);

}  // namespace pddpm
