#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pddpm/nn/adam.hpp"
#include "pddpm/nn/param_store.hpp"
#include "pddpm/nn/unet.hpp"
#include "pddpm/phantom.hpp"
#include "pddpm/tensor.hpp"
#include "pddpm/volume.hpp"

namespace pddpm::segeval {

// Fixed mini U-Net segmenter trained with BCE + soft Dice for a fixed
// iteration budget.
struct SegmenterConfig {
  nn::UNetSpec arch = default_arch();
  int iterations = 300;
  int batch_size = 8;
  nn::AdamConfig adam{1e-3f, 0.9f, 0.999f, 1e-8f};
  float dice_weight = 1.0f;
  float threshold = 0.5f;

  static nn::UNetSpec default_arch() {
    nn::UNetSpec s;
    s.in_channels = 1;
    s.out_channels = 1;
    s.base_width = 8;
    s.multipliers = {1, 2, 4};
    s.time_dim = 0;
    s.groups = 4;
    return s;
  }
};

struct Segmenter {
  nn::UNetSpec arch;
  nn::ParamStore params;
  std::vector<int> image_extents;
};

struct SegTrainLog {
  std::function<void(int iteration, float loss)> on_step;
};

// Deterministic in (data, seed, config). Throws NumericalError naming the
// iteration when the loss stops being finite.
Segmenter train_segmenter(std::span<const LabeledCase> data, std::uint64_t seed, const SegmenterConfig& config,
                          const SegTrainLog& log = {});

// Raw logit map [1, 1, H, W]. Throws ShapeError when the image does not
// match the extents the segmenter was trained on.
Tensor segment_logits(const Segmenter& segmenter, const Volume& image);

// sigmoid(logit) > threshold, as a binary single-channel volume.
Volume mask_from_logits(const Tensor& logits, float threshold);

Volume predict_mask(const Segmenter& segmenter, const Volume& image, float threshold = 0.5f);

}  // namespace pddpm::segeval
