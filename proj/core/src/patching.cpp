#include "pddpm/patching.hpp"

#include <algorithm>

#include "pddpm/diffusion.hpp"
#include "pddpm/error.hpp"

namespace pddpm {

double coordinate_value(int index, int extent) {
  return -1.0 + 2.0 * static_cast<double>(index) / static_cast<double>(extent - 1);
}

CoordinateGrid coordinate_grid(std::span<const int> extents) {
  if (extents.size() != 2) throw ArgumentError("coordinate_grid: only 2-D grids are supported");
  for (int e : extents) {
    if (e < 2) throw ArgumentError("coordinate_grid: extent " + std::to_string(e) + " < 2 cannot be normalized");
  }
  const int h = extents[0], w = extents[1];
  Volume grid(2, {h, w});
  for (int y = 0; y < h; ++y) {
    const float cy = static_cast<float>(coordinate_value(y, h));
    for (int x = 0; x < w; ++x) {
      grid.at(0, y, x) = cy;
      grid.at(1, y, x) = static_cast<float>(coordinate_value(x, w));
    }
  }
  return CoordinateGrid{std::move(grid)};
}

std::string channel_order_contract(int spatial_rank) {
  std::string s = "x_t,mask";
  for (int k = 0; k < spatial_rank; ++k) s += ",coord" + std::to_string(k);
  return s;
}

Volume assemble_condition(const Volume& mask_patch, const Volume& coord_patch) {
  if (!mask_patch.same_extents(coord_patch)) {
    throw ShapeError("assemble_condition: mask extents " + shape_str(mask_patch.extents()) + " vs coordinate extents " +
                     shape_str(coord_patch.extents()));
  }
  if (mask_patch.channels() != 1) throw ShapeError("assemble_condition: mask must have one channel");
  if (coord_patch.channels() != coord_patch.spatial_rank()) {
    throw ShapeError("assemble_condition: need one coordinate channel per spatial axis");
  }
  const Volume parts[] = {mask_patch, coord_patch};
  return Volume::concat(parts);
}

Volume full_condition(const Volume& mask, const CoordinateGrid& grid) { return assemble_condition(mask, grid.channels); }

namespace {

void check_pair(const Volume& image, const Volume& mask, const CoordinateGrid& grid) {
  if (image.channels() != 1 || mask.channels() != 1) throw ShapeError("patch: image and mask must be single-channel");
  if (!image.same_extents(mask)) {
    throw ShapeError("patch: image extents " + shape_str(image.extents()) + " vs mask " + shape_str(mask.extents()));
  }
  if (grid.extents() != image.extents()) {
    throw ShapeError("patch: grid extents " + shape_str(grid.extents()) + " vs image " + shape_str(image.extents()));
  }
}

void check_binary(const Volume& mask) {
  for (float v : mask.data()) {
    if (v != 0.0f && v != 1.0f) throw ArgumentError("patch: mask must be binary");
  }
}

PatchSample noised(Volume image_crop, Volume mask_crop, Volume coord_crop, std::vector<int> origin, int t,
                   const NoiseSchedule& schedule, Rng& rng) {
  Volume eps(1, image_crop.extents());
  rng.fill_normal(eps.data());
  PatchSample s;
  s.noisy_patch = forward_marginal(image_crop, t, eps, schedule);
  s.target_noise = std::move(eps);
  s.mask_patch = std::move(mask_crop);
  s.coord_patch = std::move(coord_crop);
  s.t = t;
  s.origin = std::move(origin);
  return s;
}

}  // namespace

std::vector<int> sample_origin(const Volume& mask, const PatchOptions& options, Rng& rng) {
  const auto& ext = mask.extents();
  if (options.size.size() != ext.size()) throw ShapeError("patch: patch rank does not match image rank");
  std::vector<int> span(ext.size());
  for (std::size_t k = 0; k < ext.size(); ++k) {
    if (options.size[k] < 1 || options.size[k] > ext[k]) {
      throw ShapeError("patch: patch size " + shape_str(options.size) + " larger than image " + shape_str(ext));
    }
    span[k] = ext[k] - options.size[k] + 1;
  }
  if (std::all_of(span.begin(), span.end(), [](int s) { return s == 1; })) return std::vector<int>(ext.size(), 0);

  if (options.oversample_nonempty && rng.uniform() < 0.5) {
    // Summed-area table to enumerate origins whose window holds a mask pixel.
    const int h = ext[0], w = ext[1], ph = options.size[0], pw = options.size[1];
    std::vector<int> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        sat[(y + 1) * (w + 1) + x + 1] = (mask.at(0, y, x) > 0.5f ? 1 : 0) + sat[y * (w + 1) + x + 1] +
                                         sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
    std::vector<std::pair<int, int>> hits;
    for (int y = 0; y < span[0]; ++y)
      for (int x = 0; x < span[1]; ++x) {
        const int s = sat[(y + ph) * (w + 1) + x + pw] - sat[y * (w + 1) + x + pw] - sat[(y + ph) * (w + 1) + x] +
                      sat[y * (w + 1) + x];
        if (s > 0) hits.emplace_back(y, x);
      }
    if (!hits.empty()) {
      const auto& [y, x] = hits[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hits.size()) - 1))];
      return {y, x};
    }
  }
  std::vector<int> origin(ext.size());
  for (std::size_t k = 0; k < ext.size(); ++k) origin[k] = static_cast<int>(rng.uniform_int(0, span[k] - 1));
  return origin;
}

PatchSample random_patch(const Volume& image, const Volume& mask, const CoordinateGrid& grid,
                         const PatchOptions& options, int t, const NoiseSchedule& schedule, Rng& rng) {
  check_pair(image, mask, grid);
  schedule.alpha_bar(t);
  std::vector<int> origin = sample_origin(mask, options, rng);
  Volume mask_crop = mask.crop(origin, options.size);
  check_binary(mask_crop);
  Volume image_crop = image.crop(origin, options.size);
  Volume coord_crop = grid.channels.crop(origin, options.size);
  return noised(std::move(image_crop), std::move(mask_crop), std::move(coord_crop), std::move(origin), t, schedule,
                rng);
}

PatchSample full_image_sample(const Volume& image, const Volume& mask, const CoordinateGrid& grid, int t,
                              const NoiseSchedule& schedule, Rng& rng) {
  check_pair(image, mask, grid);
  check_binary(mask);
  schedule.alpha_bar(t);
  return noised(image, mask, grid.channels, std::vector<int>(image.extents().size(), 0), t, schedule, rng);
}

std::vector<PatchSample> draw_batch(std::span<const TrainingPair> cases, int batch_size, const CoordinateGrid& grid,
                                    const PatchOptions& options, CropMode mode, const NoiseSchedule& schedule, Rng& rng) {
  if (cases.empty()) throw ArgumentError("draw_batch: no training cases");
  if (batch_size < 1) throw ArgumentError("draw_batch: batch size must be >= 1");
  std::vector<PatchSample> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    const auto& c = cases[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cases.size()) - 1))];
    const int t = static_cast<int>(rng.uniform_int(1, schedule.timesteps()));
    batch.push_back(mode == CropMode::kPatch ? random_patch(c.image, c.mask, grid, options, t, schedule, rng)
                                             : full_image_sample(c.image, c.mask, grid, t, schedule, rng));
  }
  return batch;
}

}  // namespace pddpm
