#include "pddpm/segeval/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "pddpm/error.hpp"

namespace pddpm::segeval {

double mean(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("mean: no values");
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) throw ArgumentError("sample_std: need at least two values");
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

RunStatistics run_statistics(std::span<const double> run_means, std::span<const std::uint64_t> seeds) {
  if (run_means.size() != seeds.size()) throw ArgumentError("run_statistics: one seed per run required");
  RunStatistics s;
  s.run_means.assign(run_means.begin(), run_means.end());
  s.seeds.assign(seeds.begin(), seeds.end());
  s.mean = mean(run_means);
  s.std = sample_std(run_means);
  return s;
}

WelchResult welch_t_test(double mean_a, double std_a, int n_a, double mean_b, double std_b, int n_b) {
  if (n_a < 2 || n_b < 2) throw ArgumentError("welch: each group needs n >= 2");
  if (!(std_a >= 0.0) || !(std_b >= 0.0)) throw ArgumentError("welch: standard deviations must be >= 0");
  const double va = std_a * std_a / n_a;
  const double vb = std_b * std_b / n_b;
  const double se2 = va + vb;
  WelchResult r;
  if (se2 == 0.0) {
    r.t = 0.0;
    r.df = static_cast<double>(n_a + n_b - 2);
    r.p = mean_a == mean_b ? 1.0 : 0.0;
    return r;
  }
  r.t = (mean_a - mean_b) / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / (n_a - 1) + vb * vb / (n_b - 1));
  const boost::math::students_t_distribution<double> dist(r.df);
  r.p = 2.0 * boost::math::cdf(dist, -std::abs(r.t));
  r.p = std::min(r.p, 1.0);
  return r;
}

double welch_p_value(double mean_a, double std_a, int n_a, double mean_b, double std_b, int n_b) {
  return welch_t_test(mean_a, std_a, n_a, mean_b, std_b, n_b).p;
}

std::vector<std::string> select_worst(std::span<const CaseScore> results, double baseline_mean) {
  std::vector<CaseScore> below;
  for (const auto& r : results)
    if (r.dsc < baseline_mean) below.push_back(r);
  std::sort(below.begin(), below.end(), [](const CaseScore& a, const CaseScore& b) {
    return a.dsc != b.dsc ? a.dsc < b.dsc : a.case_id < b.case_id;
  });
  std::vector<std::string> ids;
  ids.reserve(below.size());
  for (auto& r : below) ids.push_back(std::move(r.case_id));
  return ids;
}

std::vector<std::string> select_worst(std::span<const DiceResult> results, double baseline_mean) {
  std::vector<CaseScore> scores;
  scores.reserve(results.size());
  for (const auto& r : results) scores.push_back({r.case_id, r.dsc});
  return select_worst(scores, baseline_mean);
}

}  // namespace pddpm::segeval
