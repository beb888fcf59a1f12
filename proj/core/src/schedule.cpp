#include "pddpm/schedule.hpp"

#include <string>

#include "pddpm/error.hpp"

namespace pddpm {

NoiseSchedule NoiseSchedule::linear(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) throw ArgumentError("schedule: T must be >= 1, got " + std::to_string(timesteps));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ArgumentError("schedule: need 0 < beta_start <= beta_end < 1, got [" + std::to_string(beta_start) + ", " +
                        std::to_string(beta_end) + "]");
  }
  NoiseSchedule s;
  s.params_ = ScheduleParams{timesteps, beta_start, beta_end};
  s.alpha_.resize(static_cast<std::size_t>(timesteps));
  s.alpha_bar_.resize(static_cast<std::size_t>(timesteps));
  double running = 1.0;
  for (int i = 0; i < timesteps; ++i) {
    const double frac = timesteps == 1 ? 0.0 : static_cast<double>(i) / (timesteps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.alpha_[static_cast<std::size_t>(i)] = 1.0 - beta;
    running *= 1.0 - beta;
    s.alpha_bar_[static_cast<std::size_t>(i)] = running;
  }
  return s;
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > timesteps()) {
    throw ArgumentError("schedule: timestep " + std::to_string(t) + " outside [1, " + std::to_string(timesteps()) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

ScheduleEntry query(const NoiseSchedule& schedule, int t) { return {schedule.alpha(t), schedule.alpha_bar(t)}; }

}  // namespace pddpm
