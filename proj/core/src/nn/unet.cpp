#include "pddpm/nn/unet.hpp"

#include <cmath>
#include <string>

#include "pddpm/error.hpp"
#include "pddpm/nn/time_embedding.hpp"
#include "pddpm/rng.hpp"

namespace pddpm::nn {

namespace {

int group_count(const UNetSpec& spec, int channels) {
  return channels % spec.groups == 0 ? spec.groups : 1;
}

// Parameter-name bookkeeping shared by init and forward so both walk the
// same layer list.
struct Builder {
  const UNetSpec& spec;
  ParamStore* params = nullptr;  // init mode
  Rng* rng = nullptr;
  Tape* tape = nullptr;  // forward mode
  const ParamStore* frozen = nullptr;

  int time_hidden() const { return spec.time_dim * 4; }

  void init_uniform(const std::string& name, Shape shape, float bound) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(rng->uniform(-bound, bound));
    params->add(name, std::move(t));
  }

  void add_conv(const std::string& name, int cin, int cout, int k) {
    const float bound = std::sqrt(3.0f / static_cast<float>(cin * k * k));
    init_uniform(name + ".w", {cout, cin, k, k}, bound);
    params->add(name + ".b", Tensor({cout}, 0.0f));
  }

  void add_linear(const std::string& name, int in, int out) {
    init_uniform(name + ".w", {out, in}, std::sqrt(3.0f) / std::sqrt(static_cast<float>(in)));
    params->add(name + ".b", Tensor({out}, 0.0f));
  }

  void add_norm(const std::string& name, int c) {
    params->add(name + ".gamma", Tensor({c}, 1.0f));
    params->add(name + ".beta", Tensor({c}, 0.0f));
  }

  void add_resblock(const std::string& name, int cin, int cout) {
    add_norm(name + ".norm1", cin);
    add_conv(name + ".conv1", cin, cout, 3);
    if (spec.time_dim > 0) add_linear(name + ".temb", time_hidden(), cout);
    add_norm(name + ".norm2", cout);
    add_conv(name + ".conv2", cout, cout, 3);
    if (cin != cout) add_conv(name + ".skip", cin, cout, 1);
  }

  Var p(const std::string& name) const { return tape->parameter(*frozen, name); }

  Var conv(const std::string& name, Var x, int stride, int pad) const {
    return conv2d(*tape, x, p(name + ".w"), p(name + ".b"), Conv2dAttrs{stride, pad});
  }

  Var norm_act(const std::string& name, Var x) const {
    const int c = tape->value(x).dim(1);
    return silu(*tape, group_norm(*tape, x, p(name + ".gamma"), p(name + ".beta"), group_count(spec, c)));
  }

  Var resblock(const std::string& name, Var x, Var temb_act, int cout) const {
    const int cin = tape->value(x).dim(1);
    Var h = conv(name + ".conv1", norm_act(name + ".norm1", x), 1, 1);
    if (spec.time_dim > 0) {
      Var proj = linear(*tape, temb_act, p(name + ".temb.w"), p(name + ".temb.b"));
      h = add_channel_bias(*tape, h, proj);
    }
    h = conv(name + ".conv2", norm_act(name + ".norm2", h), 1, 1);
    Var skip = cin != cout ? conv(name + ".skip", x, 1, 0) : x;
    return add(*tape, skip, h);
  }
};

}  // namespace

void validate(const UNetSpec& spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.base_width < 1) {
    throw ArgumentError("unet: channel counts must be positive");
  }
  if (spec.multipliers.empty()) throw ArgumentError("unet: at least one level required");
  for (int m : spec.multipliers) {
    if (m < 1) throw ArgumentError("unet: channel multipliers must be positive");
  }
  if (spec.groups < 1) throw ArgumentError("unet: groups must be positive");
  if (spec.time_dim < 0 || spec.time_dim % 2 != 0) throw ArgumentError("unet: time_dim must be even and >= 0");
}

UNet::UNet(UNetSpec spec) : spec_(std::move(spec)) { validate(spec_); }

void UNet::init_params(ParamStore& params, std::uint64_t seed) const {
  Rng rng(seed);
  Builder b{spec_, &params, &rng, nullptr, nullptr};
  if (spec_.time_dim > 0) {
    b.add_linear("time.fc1", spec_.time_dim, b.time_hidden());
    b.add_linear("time.fc2", b.time_hidden(), b.time_hidden());
  }
  b.add_conv("in", spec_.in_channels, spec_.width(0), 3);
  for (int l = 0; l < spec_.levels(); ++l) {
    b.add_resblock("enc" + std::to_string(l), spec_.width(l), spec_.width(l));
    if (l + 1 < spec_.levels()) b.add_conv("down" + std::to_string(l), spec_.width(l), spec_.width(l + 1), 3);
  }
  for (int l = spec_.levels() - 2; l >= 0; --l) {
    b.add_conv("up" + std::to_string(l), spec_.width(l + 1), spec_.width(l), 3);
    b.add_resblock("dec" + std::to_string(l), 2 * spec_.width(l), spec_.width(l));
  }
  b.add_norm("out.norm", spec_.width(0));
  b.add_conv("out", spec_.width(0), spec_.out_channels, 3);
}

Var UNet::forward(Tape& tape, const ParamStore& params, Var x, std::span<const int> timesteps) const {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4 || xv.dim(1) != spec_.in_channels) {
    throw ShapeError("unet: expected input [N, " + std::to_string(spec_.in_channels) + ", H, W], got " +
                     shape_str(xv.shape()));
  }
  const int div = spec_.spatial_divisor();
  if (xv.dim(2) % div != 0 || xv.dim(3) % div != 0) {
    throw ShapeError("unet: spatial extents " + shape_str(xv.shape()) + " must be divisible by " + std::to_string(div));
  }
  const int batch = xv.dim(0);
  Builder b{spec_, nullptr, nullptr, &tape, &params};

  Var temb_act;
  if (spec_.time_dim > 0) {
    if (static_cast<int>(timesteps.size()) != batch) {
      throw ShapeError("unet: " + std::to_string(timesteps.size()) + " timesteps for batch of " + std::to_string(batch));
    }
    Var emb = tape.input(time_embedding(timesteps, spec_.time_dim));
    Var h = silu(tape, linear(tape, emb, b.p("time.fc1.w"), b.p("time.fc1.b")));
    h = linear(tape, h, b.p("time.fc2.w"), b.p("time.fc2.b"));
    temb_act = silu(tape, h);
  }

  Var h = b.conv("in", x, 1, 1);
  std::vector<Var> skips;
  for (int l = 0; l < spec_.levels(); ++l) {
    h = b.resblock("enc" + std::to_string(l), h, temb_act, spec_.width(l));
    if (l + 1 < spec_.levels()) {
      skips.push_back(h);
      h = b.conv("down" + std::to_string(l), h, 2, 1);
    }
  }
  for (int l = spec_.levels() - 2; l >= 0; --l) {
    h = b.conv("up" + std::to_string(l), upsample_nearest2x(tape, h), 1, 1);
    h = concat_channels(tape, h, skips[static_cast<std::size_t>(l)]);
    h = b.resblock("dec" + std::to_string(l), h, temb_act, spec_.width(l));
  }
  return b.conv("out", b.norm_act("out.norm", h), 1, 1);
}

}  // namespace pddpm::nn
