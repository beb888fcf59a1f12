#include <gtest/gtest.h>

#include <cmath>

#include "pddpm/error.hpp"
#include "pddpm/phantom.hpp"
#include "pddpm/rng.hpp"
#include "pddpm/segeval/dice.hpp"
#include "pddpm/segeval/experiment.hpp"
#include "pddpm/segeval/segmenter.hpp"
#include "pddpm/segeval/stats.hpp"
#include "test_util.hpp"

using namespace pddpm;
using namespace pddpm::segeval;

namespace {

Volume square(int n, int y0, int x0, int size) {
  Volume v(1, {n, n});
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) v.at(0, y, x) = 1.0f;
  return v;
}

std::vector<LabeledCase> phantom_cases(int n, std::uint64_t seed, const std::string& prefix) {
  PhantomSpec spec;
  spec.image_size = {32, 32};
  spec.nodule_radius_range = {2.0, 4.0};
  spec.vessel_count_range = {2, 4};
  std::vector<LabeledCase> out;
  for (int i = 0; i < n; ++i) {
    auto p = generate_phantom(spec, derive_seed(seed, 7, static_cast<std::uint64_t>(i)));
    out.push_back({prefix + std::to_string(i), "", std::move(p.image), std::move(p.mask)});
  }
  return out;
}

SegmenterConfig tiny_config(int iterations) {
  SegmenterConfig c;
  c.iterations = iterations;
  c.batch_size = 4;
  return c;
}

}  // namespace

TEST(Dice, ShiftedSquareHalfOverlap) {
  // 2x2 square vs. the same square shifted one column: 2 shared pixels.
  const auto r = dice(square(4, 1, 1, 2) /*pred*/, square(4, 1, 0, 2));
  EXPECT_EQ(r.tp, 2);
  EXPECT_EQ(r.fp, 2);
  EXPECT_EQ(r.fn, 2);
  EXPECT_EQ(r.tn, 10);
  EXPECT_DOUBLE_EQ(r.dsc, 0.5);
}

TEST(Dice, EmptyPolicyAndErrors) {
  EXPECT_DOUBLE_EQ(dice(Volume(1, {4, 4}), Volume(1, {4, 4})).dsc, 1.0);
  EXPECT_DOUBLE_EQ(dice_empty_policy(), 1.0);
  EXPECT_DOUBLE_EQ(dice(square(4, 0, 0, 2), Volume(1, {4, 4})).dsc, 0.0);
  EXPECT_DOUBLE_EQ(dice(Volume(1, {4, 4}), square(4, 0, 0, 2)).dsc, 0.0);
  EXPECT_THROW(dice(Volume(1, {4, 4}), Volume(1, {4, 5})), ShapeError);
  EXPECT_THROW(dice(Volume(1, {4, 4}, 0.5f), Volume(1, {4, 4})), ArgumentError);
}

TEST(Dice, ScoringPathAppliesEmptyPolicy) {
  // One segmenter scoring both splits: an empty-vs-empty case gets the
  // policy value regardless of which split it sits in.
  Segmenter s;
  s.arch = SegmenterConfig::default_arch();
  s.image_extents = {32, 32};
  nn::UNet(s.arch).init_params(s.params, 1);
  std::vector<LabeledCase> cases{{"e", "", Volume(1, {32, 32}, -1.0f), Volume(1, {32, 32})}};
  const auto at_low = score_cases(s, cases, 1.0f);  // threshold 1 -> nothing predicted
  ASSERT_EQ(at_low.size(), 1u);
  EXPECT_DOUBLE_EQ(at_low[0].dsc, dice_empty_policy());
}

TEST(Welch, ReproducesReferenceTable) {
  const double p = welch_p_value(0.4913, 0.02733, 5, 0.5418, 0.03015, 5);
  EXPECT_NEAR(p, 0.024335, 0.003);
  EXPECT_DOUBLE_EQ(p, welch_p_value(0.5418, 0.03015, 5, 0.4913, 0.02733, 5));
}

TEST(Welch, AgainstIndependentReference) {
  // Values from a standard statistics package (two-sided Welch).
  const auto r = welch_t_test(1.0, 1.0, 10, 2.0, 2.0, 20);
  EXPECT_NEAR(r.t, -1.825741858, 1e-6);
  EXPECT_NEAR(r.df, 27.98, 0.01);
  EXPECT_NEAR(r.p, 0.0785795879, 1e-6);
}

TEST(Welch, EdgeCases) {
  EXPECT_DOUBLE_EQ(welch_p_value(0.5, 0.1, 5, 0.5, 0.1, 5), 1.0);
  EXPECT_DOUBLE_EQ(welch_p_value(0.5, 0.0, 5, 0.5, 0.0, 5), 1.0);
  EXPECT_DOUBLE_EQ(welch_p_value(0.5, 0.0, 5, 0.6, 0.0, 5), 0.0);
  const double p = welch_p_value(0.5, 0.0, 5, 0.6, 0.05, 5);
  EXPECT_GT(p, 0.0);
  EXPECT_LE(p, 1.0);
  EXPECT_THROW(welch_p_value(0.5, 0.1, 1, 0.5, 0.1, 5), ArgumentError);
  EXPECT_THROW(welch_p_value(0.5, -0.1, 5, 0.5, 0.1, 5), ArgumentError);
}

TEST(RunStats, MeanAndSampleStd) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto s = run_statistics(v, seeds);
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_NEAR(s.std, std::sqrt(2.5), 1e-12);
  const std::vector<double> one{1.0};
  EXPECT_THROW(sample_std(one), ArgumentError);
}

TEST(SelectWorst, StrictThreshold) {
  const std::vector<CaseScore> v{{"a", 0.2}, {"b", 0.5}, {"c", 0.8}};
  EXPECT_EQ(select_worst(v, 0.5), std::vector<std::string>{"a"});
  EXPECT_TRUE(select_worst(v, 0.1).empty());
  const std::vector<CaseScore> ties{{"z", 0.3}, {"y", 0.3}, {"x", 0.1}};
  EXPECT_EQ(select_worst(ties, 1.0), (std::vector<std::string>{"x", "y", "z"}));
}

TEST(SelectWorst, RandomizedMatchesBruteForce) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CaseScore> v;
    const int n = static_cast<int>(rng.uniform_int(0, 30));
    for (int i = 0; i < n; ++i) v.push_back({"c" + std::to_string(i), std::round(rng.uniform() * 10) / 10});
    const double threshold = std::round(rng.uniform() * 10) / 10;
    std::vector<std::string> expected;
    for (const auto& c : v)
      if (c.dsc < threshold) expected.push_back(c.case_id);
    auto got = select_worst(v, threshold);
    std::sort(expected.begin(), expected.end());
    std::sort(got.begin(), got.end());
    EXPECT_EQ(got, expected);
  }
}

TEST(Segmenter, DeterministicAndSeedSensitive) {
  const auto data = phantom_cases(4, 1, "t");
  const auto cfg = tiny_config(5);
  const auto a = train_segmenter(data, 10, cfg), b = train_segmenter(data, 10, cfg), c = train_segmenter(data, 11, cfg);
  EXPECT_EQ(a.params.entries().size(), b.params.entries().size());
  for (std::size_t i = 0; i < a.params.entries().size(); ++i)
    EXPECT_EQ(a.params.entries()[i].value, b.params.entries()[i].value);
  bool differs = false;
  for (std::size_t i = 0; i < a.params.entries().size(); ++i)
    differs |= a.params.entries()[i].value != c.params.entries()[i].value;
  EXPECT_TRUE(differs);
}

TEST(Segmenter, OverfitsSingleImage) {
  const auto data = phantom_cases(1, 3, "o");
  auto cfg = tiny_config(250);
  cfg.batch_size = 1;
  cfg.adam.lr = 3e-3f;
  const auto seg = train_segmenter(data, 5, cfg);
  EXPECT_GT(dice(predict_mask(seg, data[0].image), data[0].mask).dsc, 0.95);
}

TEST(Segmenter, ThresholdMonotoneAndExtremes) {
  Tensor logits({1, 1, 4, 4});
  Rng rng(2);
  rng.fill_normal(logits.data());
  double prev = 1e9;
  for (float th : {0.1f, 0.3f, 0.5f, 0.7f, 0.9f}) {
    double count = 0;
    const Volume m = mask_from_logits(logits, th);
    for (float v : m.data()) count += v;
    EXPECT_LE(count, prev);
    prev = count;
  }
  Tensor neg({1, 1, 4, 4}, -50.0f);
  const Volume none = mask_from_logits(neg, 0.5f);
  for (float v : none.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Segmenter, WrongExtentsRejected) {
  const auto seg = train_segmenter(phantom_cases(2, 1, "s"), 1, tiny_config(1));
  EXPECT_THROW(segment_logits(seg, Volume(1, {64, 64})), ShapeError);
  EXPECT_THROW(train_segmenter({}, 1, tiny_config(1)), ArgumentError);
}

TEST(Experiment, LeakageRejected) {
  auto train = phantom_cases(2, 1, "c");
  auto test = phantom_cases(1, 2, "c");  // "c0" again
  EXPECT_THROW(check_no_leakage(train, test), DataError);
  train[0].case_id = "syn";
  train[0].source_case = "c0";
  train[1].case_id = "other";
  EXPECT_THROW(check_no_leakage(train, test), DataError);
  train[0].source_case = "v9";
  EXPECT_NO_THROW(check_no_leakage(train, test));
}

TEST(Experiment, ArmsAndSeedsValidated) {
  EXPECT_EQ(parse_arm("targeted"), Arm::kTargeted);
  EXPECT_STREQ(arm_label(Arm::kTargeted), "Real + Synthetic");
  EXPECT_THROW(parse_arm("both"), ArgumentError);
  ArmData data{phantom_cases(2, 1, "a"), phantom_cases(1, 2, "v"), phantom_cases(1, 3, "t")};
  const std::vector<std::uint64_t> four{1, 2, 3, 4};
  EXPECT_THROW(run_utility_experiment(Arm::kReal, data, four, tiny_config(1)), ArgumentError);
}

TEST(Experiment, ReportRoundTripAndTable) {
  ArmData data{phantom_cases(3, 1, "a"), phantom_cases(2, 2, "v"), phantom_cases(2, 3, "t")};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto cfg = tiny_config(2);
  const auto real = run_utility_experiment(Arm::kReal, data, seeds, cfg);
  ASSERT_EQ(real.runs.size(), 5u);
  EXPECT_FALSE(real.p_value.has_value());
  const auto again = run_utility_experiment(Arm::kReal, data, seeds, cfg);
  EXPECT_EQ(report_to_json(real), report_to_json(again));

  const auto other = run_utility_experiment(Arm::kTargeted, data, seeds, cfg, &real);
  ASSERT_TRUE(other.p_value.has_value());
  ASSERT_TRUE(other.deltas.has_value());
  EXPECT_EQ(other.deltas->worst_val.size() + other.deltas->other_val.size(), 2u);
  EXPECT_EQ(other.deltas->test.size(), 2u);

  const auto back = report_from_json(report_to_json(other));
  EXPECT_EQ(report_to_json(back), report_to_json(other));
  EXPECT_THROW(report_from_json("{\"arm\": 3}"), DataError);

  const UtilityReport both[] = {real, other};
  const auto table = summary_table(both);
  EXPECT_NE(table.find("Training Data"), std::string::npos);
  EXPECT_NE(table.find("Real + Synthetic"), std::string::npos);
  EXPECT_NE(table.find("p-Value"), std::string::npos);
}
