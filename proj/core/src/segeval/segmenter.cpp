#include "pddpm/segeval/segmenter.hpp"

#include <cmath>

#include "pddpm/error.hpp"
#include "pddpm/nn/ops.hpp"
#include "pddpm/nn/tape.hpp"
#include "pddpm/rng.hpp"

namespace pddpm::segeval {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;   // "init"
constexpr std::uint64_t kBatchStream = 0x62617463;  // "batc"

}  // namespace

Segmenter train_segmenter(std::span<const LabeledCase> data, std::uint64_t seed, const SegmenterConfig& config,
                          const SegTrainLog& log) {
  if (data.empty()) throw ArgumentError("train_segmenter: empty training split");
  if (config.iterations < 0 || config.batch_size < 1) throw ArgumentError("train_segmenter: bad iteration budget");
  const nn::UNet net(config.arch);
  if (config.arch.in_channels != 1 || config.arch.out_channels != 1 || config.arch.time_dim != 0) {
    throw ArgumentError("train_segmenter: segmenter maps one image channel to one logit channel, without time input");
  }
  Segmenter seg{config.arch, {}, data.front().image.extents()};
  for (const auto& c : data) {
    if (c.image.extents() != seg.image_extents || c.mask.extents() != seg.image_extents) {
      throw ShapeError("train_segmenter: case " + c.case_id + " has extents " + shape_str(c.image.extents()) +
                       ", expected " + shape_str(seg.image_extents));
    }
  }
  net.init_params(seg.params, derive_seed(seed, kInitStream));
  Rng rng(derive_seed(seed, kBatchStream));

  for (int it = 0; it < config.iterations; ++it) {
    std::vector<Tensor> images, masks;
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& c = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      images.push_back(c.image.to_tensor());
      masks.push_back(c.mask.to_tensor());
    }
    nn::Tape tape;
    nn::Var x = tape.input(stack_batch(images));
    nn::Var y = tape.input(stack_batch(masks));
    nn::Var logits = net.forward(tape, seg.params, x, {});
    nn::Var loss = nn::dice_bce_loss(tape, logits, y, config.dice_weight);
    const float value = tape.value(loss)[0];
    if (!std::isfinite(value)) {
      throw NumericalError("train_segmenter: non-finite loss at iteration " + std::to_string(it));
    }
    nn::adam_step(seg.params, tape.backward(loss, seg.params), config.adam);
    if (log.on_step) log.on_step(it, value);
  }
  return seg;
}

Tensor segment_logits(const Segmenter& segmenter, const Volume& image) {
  if (image.channels() != 1 || image.extents() != segmenter.image_extents) {
    throw ShapeError("segmenter: image " + std::to_string(image.channels()) + "x" + shape_str(image.extents()) +
                     " does not match training extents 1x" + shape_str(segmenter.image_extents));
  }
  const nn::UNet net(segmenter.arch);
  nn::Tape tape;
  tape.set_grad_enabled(false);
  nn::Var out = net.forward(tape, segmenter.params, tape.input(image.to_tensor()), {});
  return tape.value(out);
}

Volume mask_from_logits(const Tensor& logits, float threshold) {
  if (logits.rank() != 4 || logits.dim(0) != 1 || logits.dim(1) != 1) {
    throw ShapeError("mask_from_logits: expected [1, 1, H, W], got " + shape_str(logits.shape()));
  }
  Volume mask(1, {logits.dim(2), logits.dim(3)});
  auto out = mask.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    out[i] = p > threshold ? 1.0f : 0.0f;
  }
  return mask;
}

Volume predict_mask(const Segmenter& segmenter, const Volume& image, float threshold) {
  return mask_from_logits(segment_logits(segmenter, image), threshold);
}

}  // namespace pddpm::segeval
