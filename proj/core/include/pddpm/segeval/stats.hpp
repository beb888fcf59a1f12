#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pddpm/segeval/dice.hpp"

namespace pddpm::segeval {

inline constexpr int kRunsPerArm = 5;

double mean(std::span<const double> values);
// n - 1 denominator; requires at least two values.
double sample_std(std::span<const double> values);

struct RunStatistics {
  std::vector<double> run_means;  // mean test DSC of each run
  std::vector<std::uint64_t> seeds;
  double mean = 0.0;
  double std = 0.0;
};

RunStatistics run_statistics(std::span<const double> run_means, std::span<const std::uint64_t> seeds);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Two-tailed Welch t-test from summary statistics. Requires n >= 2 and
// std >= 0. With both stds zero: p = 1 for equal means, 0 otherwise.
WelchResult welch_t_test(double mean_a, double std_a, int n_a, double mean_b, double std_b, int n_b);
double welch_p_value(double mean_a, double std_a, int n_a, double mean_b, double std_b, int n_b);

struct CaseScore {
  std::string case_id;
  double dsc = 0.0;
};

// Cases with dsc strictly below baseline_mean, ascending by dsc (ties by id).
std::vector<std::string> select_worst(std::span<const CaseScore> results, double baseline_mean);
std::vector<std::string> select_worst(std::span<const DiceResult> results, double baseline_mean);

}  // namespace pddpm::segeval
