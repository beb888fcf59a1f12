#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pddpm/nn/adam.hpp"
#include "pddpm/nn/tape.hpp"
#include "pddpm/nn/unet.hpp"
#include "pddpm/patching.hpp"
#include "pddpm/rng.hpp"
#include "pddpm/schedule.hpp"
#include "pddpm/volume.hpp"

namespace pddpm {

struct DiffusionConfig {
  NoiseSchedule schedule;
  std::vector<int> image_extents;
  int condition_channels = 3;
};

// Throws ArgumentError unless condition_channels == 1 + D.
void validate(const DiffusionConfig& config);

// Noise predictor eps_theta(x_t, t, condition).
class EpsilonModel {
 public:
  virtual ~EpsilonModel() = default;

  // noisy [N, 1, H, W], condition [N, Cc, H, W] -> predicted noise [N, 1, H, W].
  virtual nn::Var predict(nn::Tape& tape, nn::Var noisy, nn::Var condition, std::span<const int> timesteps) const = 0;
  virtual int condition_channels() const = 0;
};

// U-Net over the channel concatenation [x_t, condition].
class UNetDenoiser final : public EpsilonModel {
 public:
  // 3-level U-Net, base width 32, multipliers (1, 2, 4), time embedding width 32.
  static nn::UNetSpec default_spec(int condition_channels);

  UNetDenoiser(nn::UNetSpec spec, std::uint64_t init_seed);
  UNetDenoiser(nn::UNetSpec spec, nn::ParamStore params);

  nn::Var predict(nn::Tape& tape, nn::Var noisy, nn::Var condition, std::span<const int> timesteps) const override;
  int condition_channels() const override { return net_.spec().in_channels - 1; }

  const nn::UNetSpec& spec() const { return net_.spec(); }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  nn::UNet net_;
  nn::ParamStore params_;
};

// One step of the forward chain: sqrt(alpha_t) x_prev + sqrt(1 - alpha_t) z.
Volume forward_step(const Volume& x_prev, int t, const NoiseSchedule& schedule, Rng& rng);
Volume forward_step(const Volume& x_prev, double alpha, Rng& rng);

// Closed form of t chained steps: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Volume forward_marginal(const Volume& x0, int t, const Volume& eps, const NoiseSchedule& schedule);
Volume forward_marginal(const Volume& x0, double alpha_bar, const Volume& eps);

struct LossResult {
  float loss = 0.0f;
  nn::Tape tape;
  nn::Var loss_var;
};

// Mean squared error between the true noise and eps_theta over batch and
// pixels; the returned tape is ready for backward. Throws NumericalError on a
// non-finite loss.
LossResult training_loss(const EpsilonModel& model, std::span<const PatchSample> batch, const NoiseSchedule& schedule);

struct StepStats {
  float loss = 0.0f;
  std::size_t activation_elements = 0;
};

// training_loss + backward + Adam.
StepStats train_step(UNetDenoiser& model, std::span<const PatchSample> batch, const NoiseSchedule& schedule,
                     const nn::AdamConfig& adam);

// eps_theta for a single full volume (inference, no gradients).
Volume predict_noise(const EpsilonModel& model, const Volume& x_t, const Volume& condition, int t);

// mu = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps) / sqrt(alpha_t).
Volume reverse_mean(const Volume& x_t, const Volume& eps, int t, const NoiseSchedule& schedule);

// mu_theta + sigma_t z with sigma_t^2 = beta_t; z = 0 at t = 1.
Volume reverse_step(const EpsilonModel& model, const Volume& x_t, int t, const Volume& condition,
                    const NoiseSchedule& schedule, Rng& rng);

struct SampleOptions {
  float clip_min = -1.0f;
  float clip_max = 1.0f;
};

// Ancestral sampling at the full extent of `condition`: x_T ~ N(0, I), then
// reverse_step for t = T..1, then clipping.
Volume sample(const EpsilonModel& model, const Volume& condition, const NoiseSchedule& schedule, Rng& rng,
              const SampleOptions& options = {});

}  // namespace pddpm
