#include "pddpm/segeval/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "../bytes.hpp"
#include "json.hpp"
#include "pddpm/error.hpp"
#include "pddpm/hashing.hpp"

namespace pddpm::segeval {

namespace {

using Json = nlohmann::ordered_json;

std::string params_digest(const nn::ParamStore& params) {
  std::vector<unsigned char> bytes;
  for (const auto& e : params.entries()) {
    bytes.insert(bytes.end(), e.name.begin(), e.name.end());
    const auto* p = reinterpret_cast<const unsigned char*>(e.value.ptr());
    bytes.insert(bytes.end(), p, p + e.value.size() * sizeof(float));
  }
  return sha256_hex(bytes);
}

std::vector<CaseScore> average_over_runs(const std::vector<RunResult>& runs, bool validation) {
  std::vector<CaseScore> out;
  if (runs.empty()) return out;
  const auto& first = validation ? runs.front().val : runs.front().test;
  for (std::size_t i = 0; i < first.size(); ++i) {
    double s = 0.0;
    for (const auto& r : runs) s += (validation ? r.val : r.test)[i].dsc;
    out.push_back({first[i].case_id, s / static_cast<double>(runs.size())});
  }
  return out;
}

double mean_dsc(const std::vector<DiceResult>& results) {
  double s = 0.0;
  for (const auto& r : results) s += r.dsc;
  return results.empty() ? 0.0 : s / static_cast<double>(results.size());
}

Json dice_to_json(const DiceResult& d) {
  return Json{{"id", d.case_id}, {"tp", d.tp}, {"fp", d.fp}, {"fn", d.fn}, {"tn", d.tn}, {"dsc", d.dsc}};
}

DiceResult dice_from_json(const nlohmann::json& j) {
  DiceResult d;
  d.case_id = j.at("id").get<std::string>();
  d.tp = j.at("tp").get<std::int64_t>();
  d.fp = j.at("fp").get<std::int64_t>();
  d.fn = j.at("fn").get<std::int64_t>();
  d.tn = j.at("tn").get<std::int64_t>();
  d.dsc = j.at("dsc").get<double>();
  return d;
}

Json deltas_to_json(const std::vector<CaseDelta>& deltas) {
  Json arr = Json::array();
  for (const auto& d : deltas) {
    arr.push_back(Json{{"id", d.case_id}, {"baseline_dsc", d.baseline_dsc}, {"arm_dsc", d.arm_dsc}, {"delta", d.delta}});
  }
  return arr;
}

std::vector<CaseDelta> deltas_from_json(const nlohmann::json& j) {
  std::vector<CaseDelta> out;
  for (const auto& d : j) {
    out.push_back({d.at("id").get<std::string>(), d.at("baseline_dsc").get<double>(), d.at("arm_dsc").get<double>(),
                   d.at("delta").get<double>()});
  }
  return out;
}

}  // namespace

const char* arm_name(Arm arm) {
  switch (arm) {
    case Arm::kReal: return "real";
    case Arm::kSynthetic: return "synthetic";
    case Arm::kTargeted: return "targeted";
  }
  return "real";
}

const char* arm_label(Arm arm) {
  switch (arm) {
    case Arm::kReal: return "Real";
    case Arm::kSynthetic: return "Synthetic";
    case Arm::kTargeted: return "Real + Synthetic";
  }
  return "Real";
}

Arm parse_arm(const std::string& name) {
  if (name == "real") return Arm::kReal;
  if (name == "synthetic") return Arm::kSynthetic;
  if (name == "targeted") return Arm::kTargeted;
  throw ArgumentError("unknown arm '" + name + "' (expected real, synthetic or targeted)");
}

std::vector<CaseScore> UtilityReport::mean_val_scores() const { return average_over_runs(runs, true); }
std::vector<CaseScore> UtilityReport::mean_test_scores() const { return average_over_runs(runs, false); }

std::vector<DiceResult> score_cases(const Segmenter& segmenter, std::span<const LabeledCase> cases, float threshold) {
  std::vector<DiceResult> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(dice(predict_mask(segmenter, c.image, threshold), c.mask, c.case_id));
  return out;
}

void check_no_leakage(std::span<const LabeledCase> train, std::span<const LabeledCase> test) {
  std::set<std::string> test_ids;
  for (const auto& c : test) test_ids.insert(c.case_id);
  for (const auto& c : train) {
    if (test_ids.contains(c.case_id)) throw DataError("split leakage: test case '" + c.case_id + "' in training data");
    if (!c.source_case.empty() && test_ids.contains(c.source_case)) {
      throw DataError("split leakage: training sample '" + c.case_id + "' was generated from test case '" +
                      c.source_case + "'");
    }
  }
}

std::vector<std::string> worst_validation_cases(const UtilityReport& baseline) {
  if (baseline.arm != Arm::kReal) throw ArgumentError("worst_validation_cases: baseline must be the real arm");
  const auto scores = baseline.mean_val_scores();
  if (scores.empty()) throw DataError("worst_validation_cases: baseline report has no validation results");
  return select_worst(scores, baseline.stats.mean);
}

UtilityReport run_utility_experiment(Arm arm, const ArmData& data, std::span<const std::uint64_t> seeds,
                                     const SegmenterConfig& config, const UtilityReport* baseline,
                                     const SegTrainLog& log) {
  if (static_cast<int>(seeds.size()) != kRunsPerArm) {
    throw ArgumentError("run_utility_experiment: exactly " + std::to_string(kRunsPerArm) + " seeds required");
  }
  if (data.train.empty() || data.val.empty() || data.test.empty()) {
    throw DataError("run_utility_experiment: train, val and test splits must be non-empty");
  }
  check_no_leakage(data.train, data.test);
  if (baseline && baseline->arm != Arm::kReal) throw ArgumentError("run_utility_experiment: baseline must be the real arm");

  UtilityReport report;
  report.arm = arm;
  for (const auto& c : data.train) report.training_cases.push_back(c.case_id);
  std::vector<double> run_means;
  for (std::uint64_t seed : seeds) {
    const Segmenter seg = train_segmenter(data.train, seed, config, log);
    RunResult run;
    run.seed = seed;
    run.val = score_cases(seg, data.val, config.threshold);
    run.test = score_cases(seg, data.test, config.threshold);
    run.mean_val_dsc = mean_dsc(run.val);
    run.mean_test_dsc = mean_dsc(run.test);
    run.params_sha256 = params_digest(seg.params);
    run_means.push_back(run.mean_test_dsc);
    report.runs.push_back(std::move(run));
  }
  report.stats = run_statistics(run_means, seeds);

  if (baseline && arm != Arm::kReal) {
    report.p_value = welch_p_value(baseline->stats.mean, baseline->stats.std, static_cast<int>(baseline->runs.size()),
                                   report.stats.mean, report.stats.std, static_cast<int>(report.runs.size()));
    const auto worst = worst_validation_cases(*baseline);
    const std::set<std::string> worst_set(worst.begin(), worst.end());
    const auto base_val = baseline->mean_val_scores();
    const auto base_test = baseline->mean_test_scores();
    const auto arm_val = report.mean_val_scores();
    const auto arm_test = report.mean_test_scores();
    if (base_val.size() != arm_val.size() || base_test.size() != arm_test.size()) {
      throw DataError("run_utility_experiment: baseline was scored on different validation/test splits");
    }
    SubgroupDeltas deltas;
    for (std::size_t i = 0; i < arm_val.size(); ++i) {
      if (base_val[i].case_id != arm_val[i].case_id) throw DataError("run_utility_experiment: validation split differs");
      CaseDelta d{arm_val[i].case_id, base_val[i].dsc, arm_val[i].dsc, arm_val[i].dsc - base_val[i].dsc};
      (worst_set.contains(d.case_id) ? deltas.worst_val : deltas.other_val).push_back(d);
    }
    for (std::size_t i = 0; i < arm_test.size(); ++i) {
      if (base_test[i].case_id != arm_test[i].case_id) throw DataError("run_utility_experiment: test split differs");
      deltas.test.push_back({arm_test[i].case_id, base_test[i].dsc, arm_test[i].dsc, arm_test[i].dsc - base_test[i].dsc});
    }
    report.deltas = std::move(deltas);
  }
  return report;
}

std::string report_to_json(const UtilityReport& report) {
  Json j;
  j["arm"] = arm_name(report.arm);
  j["config_hash"] = report.config_hash;
  j["training_cases"] = report.training_cases;
  j["targeted_cases"] = report.targeted_cases;
  Json runs = Json::array();
  for (const auto& r : report.runs) {
    Json jr;
    jr["seed"] = r.seed;
    jr["mean_val_dsc"] = r.mean_val_dsc;
    jr["mean_test_dsc"] = r.mean_test_dsc;
    jr["params_sha256"] = r.params_sha256;
    jr["val"] = Json::array();
    for (const auto& d : r.val) jr["val"].push_back(dice_to_json(d));
    jr["test"] = Json::array();
    for (const auto& d : r.test) jr["test"].push_back(dice_to_json(d));
    runs.push_back(std::move(jr));
  }
  j["runs"] = std::move(runs);
  j["statistics"] = Json{{"run_means", report.stats.run_means},
                         {"seeds", report.stats.seeds},
                         {"mean", report.stats.mean},
                         {"std", report.stats.std}};
  j["p_value"] = report.p_value ? Json(*report.p_value) : Json(nullptr);
  if (report.deltas) {
    j["subgroup_deltas"] = Json{{"worst_val", deltas_to_json(report.deltas->worst_val)},
                                {"other_val", deltas_to_json(report.deltas->other_val)},
                                {"test", deltas_to_json(report.deltas->test)}};
  } else {
    j["subgroup_deltas"] = nullptr;
  }
  return j.dump(2) + "\n";
}

UtilityReport report_from_json(const std::string& text) {
  UtilityReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.arm = parse_arm(j.at("arm").get<std::string>());
    r.config_hash = j.at("config_hash").get<std::string>();
    r.training_cases = j.at("training_cases").get<std::vector<std::string>>();
    r.targeted_cases = j.at("targeted_cases").get<std::vector<std::string>>();
    for (const auto& jr : j.at("runs")) {
      RunResult run;
      run.seed = jr.at("seed").get<std::uint64_t>();
      run.mean_val_dsc = jr.at("mean_val_dsc").get<double>();
      run.mean_test_dsc = jr.at("mean_test_dsc").get<double>();
      run.params_sha256 = jr.at("params_sha256").get<std::string>();
      for (const auto& d : jr.at("val")) run.val.push_back(dice_from_json(d));
      for (const auto& d : jr.at("test")) run.test.push_back(dice_from_json(d));
      r.runs.push_back(std::move(run));
    }
    const auto& s = j.at("statistics");
    r.stats.run_means = s.at("run_means").get<std::vector<double>>();
    r.stats.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
    r.stats.mean = s.at("mean").get<double>();
    r.stats.std = s.at("std").get<double>();
    if (!j.at("p_value").is_null()) r.p_value = j.at("p_value").get<double>();
    if (!j.at("subgroup_deltas").is_null()) {
      const auto& d = j.at("subgroup_deltas");
      r.deltas = SubgroupDeltas{deltas_from_json(d.at("worst_val")), deltas_from_json(d.at("other_val")),
                                deltas_from_json(d.at("test"))};
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report: " + std::string(e.what()));
  }
  return r;
}

void save_report(const UtilityReport& report, const std::string& path) {
  const std::string text = report_to_json(report);
  detail::write_file_atomic(path, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

UtilityReport load_report(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return report_from_json(std::string(bytes.begin(), bytes.end()));
}

std::string summary_table(std::span<const UtilityReport> reports) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-20s %-26s %s\n", "Training Data", "Mean Test Dice Score", "p-Value");
  os << line;
  os << std::string(58, '-') << "\n";
  for (const auto& r : reports) {
    char score[64], p[32];
    std::snprintf(score, sizeof(score), "%.4f +/- %.5f", r.stats.mean, r.stats.std);
    if (r.p_value) {
      std::snprintf(p, sizeof(p), "%.6f", *r.p_value);
    } else {
      std::snprintf(p, sizeof(p), "-");
    }
    std::snprintf(line, sizeof(line), "%-20s %-26s %s\n", arm_label(r.arm), score, p);
    os << line;
  }
  return os.str();
}

}  // namespace pddpm::segeval
