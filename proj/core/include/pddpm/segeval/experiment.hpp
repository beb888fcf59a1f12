#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pddpm/phantom.hpp"
#include "pddpm/segeval/dice.hpp"
#include "pddpm/segeval/segmenter.hpp"
#include "pddpm/segeval/stats.hpp"

namespace pddpm::segeval {

// real: real training split only. synthetic: samples conditioned on the
// training-split masks only. targeted: real training split plus samples
// conditioned on the worst-predicted validation masks of the real arm.
enum class Arm { kReal, kSynthetic, kTargeted };

const char* arm_name(Arm arm);
const char* arm_label(Arm arm);  // "Real", "Synthetic", "Real + Synthetic"
Arm parse_arm(const std::string& name);

struct ArmData {
  std::vector<LabeledCase> train;
  std::vector<LabeledCase> val;   // fixed real validation split
  std::vector<LabeledCase> test;  // fixed real test split
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<DiceResult> val;
  std::vector<DiceResult> test;
  double mean_val_dsc = 0.0;
  double mean_test_dsc = 0.0;
  std::string params_sha256;
};

struct CaseDelta {
  std::string case_id;
  double baseline_dsc = 0.0;
  double arm_dsc = 0.0;
  double delta = 0.0;
};

struct SubgroupDeltas {
  std::vector<CaseDelta> worst_val;
  std::vector<CaseDelta> other_val;
  std::vector<CaseDelta> test;
};

struct UtilityReport {
  Arm arm = Arm::kReal;
  std::string config_hash;
  std::vector<std::string> training_cases;
  // Targeted arm: validation cases whose masks conditioned the extra samples.
  std::vector<std::string> targeted_cases;
  std::vector<RunResult> runs;
  RunStatistics stats;
  std::optional<double> p_value;  // vs. the real arm
  std::optional<SubgroupDeltas> deltas;

  // Per-case DSC averaged over runs.
  std::vector<CaseScore> mean_val_scores() const;
  std::vector<CaseScore> mean_test_scores() const;
};

// Scores every case with one segmenter; the single path for both the
// validation and the test split.
std::vector<DiceResult> score_cases(const Segmenter& segmenter, std::span<const LabeledCase> cases, float threshold);

// Throws DataError if any training case (or the case that conditioned a
// synthetic sample) is a test case.
void check_no_leakage(std::span<const LabeledCase> train, std::span<const LabeledCase> test);

// Worst validation cases of the real arm: per-case mean validation DSC
// strictly below the real arm's grand mean test DSC.
std::vector<std::string> worst_validation_cases(const UtilityReport& baseline);

// Trains one segmenter per seed (exactly kRunsPerArm), scores the fixed val
// and test splits, aggregates. With a baseline (the real arm), adds the
// Welch p-value and per-case deltas for worst-val / other-val / test.
UtilityReport run_utility_experiment(Arm arm, const ArmData& data, std::span<const std::uint64_t> seeds,
                                     const SegmenterConfig& config, const UtilityReport* baseline = nullptr,
                                     const SegTrainLog& log = {});

std::string report_to_json(const UtilityReport& report);
UtilityReport report_from_json(const std::string& text);
void save_report(const UtilityReport& report, const std::string& path);
UtilityReport load_report(const std::string& path);

// Plain-text table: training data | mean test DSC +- std | p-value.
std::string summary_table(std::span<const UtilityReport> reports);

}  // namespace pddpm::segeval
