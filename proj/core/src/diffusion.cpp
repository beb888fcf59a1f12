#include "pddpm/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "pddpm/error.hpp"
#include "pddpm/nn/ops.hpp"

namespace pddpm {

void validate(const DiffusionConfig& config) {
  const int d = static_cast<int>(config.image_extents.size());
  if (config.condition_channels != 1 + d) {
    throw ArgumentError("diffusion config: condition_channels must be 1 + D = " + std::to_string(1 + d) + ", got " +
                        std::to_string(config.condition_channels));
  }
}

nn::UNetSpec UNetDenoiser::default_spec(int condition_channels) {
  nn::UNetSpec spec;
  spec.in_channels = 1 + condition_channels;
  spec.out_channels = 1;
  spec.base_width = 32;
  spec.multipliers = {1, 2, 4};
  spec.time_dim = 32;
  spec.groups = 8;
  return spec;
}

UNetDenoiser::UNetDenoiser(nn::UNetSpec spec, std::uint64_t init_seed) : net_(std::move(spec)) {
  if (net_.spec().out_channels != 1) throw ArgumentError("denoiser: output must be a single noise channel");
  if (net_.spec().time_dim == 0) throw ArgumentError("denoiser: time conditioning is required");
  net_.init_params(params_, init_seed);
}

UNetDenoiser::UNetDenoiser(nn::UNetSpec spec, nn::ParamStore params) : net_(std::move(spec)), params_(std::move(params)) {
  if (net_.spec().out_channels != 1) throw ArgumentError("denoiser: output must be a single noise channel");
  nn::ParamStore reference;
  net_.init_params(reference, 0);
  for (const auto& e : reference.entries()) {
    if (!params_.contains(e.name)) throw ArgumentError("denoiser: parameter '" + e.name + "' missing");
    if (params_.at(e.name).shape() != e.value.shape()) {
      throw ShapeError("denoiser: parameter '" + e.name + "' has shape " + shape_str(params_.at(e.name).shape()) +
                       ", architecture expects " + shape_str(e.value.shape()));
    }
  }
  if (params_.size() != reference.size()) throw ArgumentError("denoiser: unexpected extra parameters");
}

nn::Var UNetDenoiser::predict(nn::Tape& tape, nn::Var noisy, nn::Var condition, std::span<const int> timesteps) const {
  const Tensor& c = tape.value(condition);
  if (c.rank() != 4 || c.dim(1) != condition_channels()) {
    throw ShapeError("denoiser: condition must be [N, " + std::to_string(condition_channels()) + ", H, W], got " +
                     shape_str(c.shape()));
  }
  return net_.forward(tape, params_, nn::concat_channels(tape, noisy, condition), timesteps);
}

Volume forward_step(const Volume& x_prev, double alpha, Rng& rng) {
  const float a = static_cast<float>(std::sqrt(alpha));
  const float s = static_cast<float>(std::sqrt(1.0 - alpha));
  Volume out(x_prev.channels(), x_prev.extents());
  auto src = x_prev.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * src[i] + s * static_cast<float>(rng.normal());
  return out;
}

Volume forward_step(const Volume& x_prev, int t, const NoiseSchedule& schedule, Rng& rng) {
  return forward_step(x_prev, schedule.alpha(t), rng);
}

Volume forward_marginal(const Volume& x0, double alpha_bar, const Volume& eps) {
  if (x0.channels() != eps.channels() || !x0.same_extents(eps)) {
    throw ShapeError("forward_marginal: x0 " + std::to_string(x0.channels()) + "x" + shape_str(x0.extents()) +
                     " vs eps " + std::to_string(eps.channels()) + "x" + shape_str(eps.extents()));
  }
  const float a = static_cast<float>(std::sqrt(alpha_bar));
  const float s = static_cast<float>(std::sqrt(1.0 - alpha_bar));
  Volume out(x0.channels(), x0.extents());
  auto src = x0.data();
  auto e = eps.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * src[i] + s * e[i];
  return out;
}

Volume forward_marginal(const Volume& x0, int t, const Volume& eps, const NoiseSchedule& schedule) {
  return forward_marginal(x0, schedule.alpha_bar(t), eps);
}

LossResult training_loss(const EpsilonModel& model, std::span<const PatchSample> batch, const NoiseSchedule& schedule) {
  if (batch.empty()) throw ArgumentError("training_loss: empty batch");
  std::vector<Tensor> noisy, target, cond;
  std::vector<int> timesteps;
  for (const auto& s : batch) {
    schedule.alpha(s.t);
    noisy.push_back(s.noisy_patch.to_tensor());
    target.push_back(s.target_noise.to_tensor());
    cond.push_back(assemble_condition(s.mask_patch, s.coord_patch).to_tensor());
    timesteps.push_back(s.t);
  }
  LossResult r;
  nn::Var x = r.tape.input(stack_batch(noisy));
  nn::Var c = r.tape.input(stack_batch(cond));
  nn::Var eps = r.tape.input(stack_batch(target));
  nn::Var pred = model.predict(r.tape, x, c, timesteps);
  r.loss_var = nn::mse(r.tape, pred, eps);
  r.loss = r.tape.value(r.loss_var)[0];
  if (!std::isfinite(r.loss)) throw NumericalError("training_loss: non-finite loss (training diverged)");
  return r;
}

StepStats train_step(UNetDenoiser& model, std::span<const PatchSample> batch, const NoiseSchedule& schedule,
                     const nn::AdamConfig& adam) {
  LossResult r = training_loss(model, batch, schedule);
  StepStats stats{r.loss, r.tape.activation_elements()};
  nn::Gradients grads = r.tape.backward(r.loss_var, model.params());
  nn::adam_step(model.params(), grads, adam);
  return stats;
}

Volume predict_noise(const EpsilonModel& model, const Volume& x_t, const Volume& condition, int t) {
  if (!x_t.same_extents(condition)) {
    throw ShapeError("predict_noise: x_t extents " + shape_str(x_t.extents()) + " vs condition " +
                     shape_str(condition.extents()));
  }
  nn::Tape tape;
  tape.set_grad_enabled(false);
  const int ts[] = {t};
  nn::Var out = model.predict(tape, tape.input(x_t.to_tensor()), tape.input(condition.to_tensor()), ts);
  return Volume::from_tensor(tape.value(out), 0);
}

Volume reverse_mean(const Volume& x_t, const Volume& eps, int t, const NoiseSchedule& schedule) {
  if (!x_t.same_extents(eps) || x_t.channels() != eps.channels()) throw ShapeError("reverse_mean: x_t vs eps shape");
  const double alpha = schedule.alpha(t);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(alpha);
  Volume mu(x_t.channels(), x_t.extents());
  auto x = x_t.data();
  auto e = eps.data();
  auto m = mu.data();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(inv * (x[i] - coef * e[i]));
  return mu;
}

Volume reverse_step(const EpsilonModel& model, const Volume& x_t, int t, const Volume& condition,
                    const NoiseSchedule& schedule, Rng& rng) {
  schedule.alpha(t);
  if (!x_t.same_extents(condition)) {
    throw ShapeError("reverse_step: condition extents " + shape_str(condition.extents()) + " vs x_t " +
                     shape_str(x_t.extents()));
  }
  Volume out = reverse_mean(x_t, predict_noise(model, x_t, condition, t), t, schedule);
  if (t > 1) {
    const float sigma = static_cast<float>(std::sqrt(schedule.beta(t)));
    for (auto& v : out.data()) v += sigma * static_cast<float>(rng.normal());
  }
  for (float v : out.data()) {
    if (!std::isfinite(v)) throw NumericalError("reverse_step: non-finite value at t=" + std::to_string(t));
  }
  return out;
}

Volume sample(const EpsilonModel& model, const Volume& condition, const NoiseSchedule& schedule, Rng& rng,
              const SampleOptions& options) {
  if (condition.channels() != model.condition_channels()) {
    throw ShapeError("sample: condition has " + std::to_string(condition.channels()) + " channels, model expects " +
                     std::to_string(model.condition_channels()));
  }
  Volume x(1, condition.extents());
  rng.fill_normal(x.data());
  for (int t = schedule.timesteps(); t >= 1; --t) x = reverse_step(model, x, t, condition, schedule, rng);
  for (auto& v : x.data()) v = std::clamp(v, options.clip_min, options.clip_max);
  return x;
}

}  // namespace pddpm
