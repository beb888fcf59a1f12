#include <gtest/gtest.h>

#include <cmath>

#include "pddpm/error.hpp"
#include "pddpm/schedule.hpp"

using namespace pddpm;

TEST(Schedule, SingleStep) {
  const auto s = NoiseSchedule::linear(1, 0.1, 0.1);
  EXPECT_DOUBLE_EQ(s.alpha(1), 0.9);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.9);
}

TEST(Schedule, EndpointsOfTheRamp) {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  EXPECT_NEAR(s.alpha(1), 0.9999, 1e-12);
  EXPECT_NEAR(s.alpha(1000), 0.98, 1e-12);
  EXPECT_NEAR(s.beta(500), 1e-4 + (0.02 - 1e-4) * 499.0 / 999.0, 1e-12);
}

TEST(Schedule, CumulativeProductMatchesIndependentLoop) {
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
  EXPECT_NEAR(s.alpha_bar(1000) / static_cast<double>(prod), 1.0, 1e-6);
}

TEST(Schedule, RecurrenceAndMonotonicity) {
  const auto s = NoiseSchedule::linear(100, 1e-3, 0.2);
  EXPECT_EQ(query(s, 1).alpha_bar, query(s, 1).alpha);
  for (int t = 2; t <= 100; ++t) {
    EXPECT_NEAR(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t), 1e-6 * s.alpha_bar(t));
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.alpha(t), 0.0);
    EXPECT_LT(s.alpha(t), 1.0);
  }
  EXPECT_EQ(s.alpha_bar(100), *std::min_element(s.alpha_bars().begin(), s.alpha_bars().end()));
}

TEST(Schedule, TerminalSignalIsNoiseDominated) {
  // Default full schedule and the rescaled short one used by the desk config.
  for (const auto& s : {NoiseSchedule::linear(1000, 1e-4, 0.02), NoiseSchedule::linear(100, 1e-3, 0.2)}) {
    const int T = s.timesteps();
    EXPECT_LT(s.alpha_bar(T), 0.01);
    EXPECT_LT(std::sqrt(s.alpha_bar(T)) / std::sqrt(1.0 - s.alpha_bar(T)), 0.1);
  }
}

TEST(Schedule, RejectsBadBoundsAndSteps) {
  EXPECT_THROW(NoiseSchedule::linear(0, 1e-4, 0.02), ArgumentError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.02), ArgumentError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.03, 0.02), ArgumentError);
  EXPECT_THROW(NoiseSchedule::linear(10, 1e-4, 1.0), ArgumentError);
  const auto s = NoiseSchedule::linear(10, 1e-4, 0.02);
  EXPECT_THROW(query(s, 0), ArgumentError);
  EXPECT_THROW(query(s, 11), ArgumentError);
}
