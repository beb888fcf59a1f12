#pragma once

#include <vector>

namespace pddpm {

struct ScheduleParams {
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  bool operator==(const ScheduleParams&) const = default;
};

// Variance schedule of the forward noising chain. Timesteps are 1-based:
// alpha(t) is the per-step signal scale, alpha_bar(t) the running product
// alpha(1) * ... * alpha(t), and beta(t) = 1 - alpha(t). Immutable.
class NoiseSchedule {
 public:
  // Linear beta ramp from beta_start (t = 1) to beta_end (t = T).
  // Requires 0 < beta_start <= beta_end < 1 and T >= 1.
  static NoiseSchedule linear(int timesteps, double beta_start, double beta_end);
  static NoiseSchedule linear(const ScheduleParams& p) { return linear(p.timesteps, p.beta_start, p.beta_end); }

  int timesteps() const { return static_cast<int>(alpha_.size()); }
  const ScheduleParams& params() const { return params_; }

  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
  double beta(int t) const { return 1.0 - alpha(t); }

  const std::vector<double>& alphas() const { return alpha_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::size_t index(int t) const;

  ScheduleParams params_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

struct ScheduleEntry {
  double alpha;
  double alpha_bar;
};

// Stored (alpha_t, alpha_bar_t); throws ArgumentError unless 1 <= t <= T.
ScheduleEntry query(const NoiseSchedule& schedule, int t);

}  // namespace pddpm
