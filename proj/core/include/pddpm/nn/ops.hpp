#pragma once

#include <span>
#include <string_view>

#include "pddpm/nn/tape.hpp"

namespace pddpm::nn {

struct Conv2dAttrs {
  int stride = 1;
  int padding = 0;
};

// x [N, Cin, H, W], weight [Cout, Cin, K, K], bias [Cout]; zero padding.
Var conv2d(Tape& tape, Var x, Var weight, Var bias, Conv2dAttrs attrs = {});
// x [N, in], weight [out, in], bias [out].
Var linear(Tape& tape, Var x, Var weight, Var bias);
// x [N, C, H, W]; statistics per (sample, group of C/groups channels).
Var group_norm(Tape& tape, Var x, Var gamma, Var beta, int groups, float eps = 1e-5f);
Var silu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);
Var upsample_nearest2x(Tape& tape, Var x);
Var concat_channels(Tape& tape, Var a, Var b);
// Elementwise sum of two identically shaped tensors.
Var add(Tape& tape, Var a, Var b);
// x [N, C, H, W] + v [N, C] broadcast over the spatial axes.
Var add_channel_bias(Tape& tape, Var x, Var v);
Var scale(Tape& tape, Var x, float factor);
// Reductions to a [1] tensor.
Var sum(Tape& tape, Var x);
Var mse(Tape& tape, Var prediction, Var target);
// Mean binary cross-entropy on logits plus (1 - soft Dice), per-sample Dice
// averaged over the batch. target in {0, 1}.
Var dice_bce_loss(Tape& tape, Var logits, Var target, float dice_weight = 1.0f);

enum class OpKind {
  kConv2d,
  kLinear,
  kGroupNorm,
  kSilu,
  kSigmoid,
  kUpsampleNearest2x,
  kConcatChannels,
  kAdd,
  kAddChannelBias,
  kScale,
  kSum,
  kMse,
  kDiceBceLoss,
};

struct OpAttrs {
  Conv2dAttrs conv;
  int groups = 1;
  float eps = 1e-5f;
  float factor = 1.0f;
};

std::string_view op_name(OpKind kind);

// Generic dispatch over the op set; checks arity and forwards to the typed op.
Var op_forward(Tape& tape, OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

}  // namespace pddpm::nn
