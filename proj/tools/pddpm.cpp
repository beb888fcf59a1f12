#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pddpm/app/config.hpp"
#include "pddpm/app/pipeline.hpp"
#include "pddpm/error.hpp"
#include "pddpm/hashing.hpp"
#include "pddpm/segeval/experiment.hpp"

namespace fs = std::filesystem;
using namespace pddpm;
using segeval::Arm;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config_path, "Experiment config (JSON); built-in defaults when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override seeds.root");
  if (!out_help.empty()) cmd->add_option("--out", c.out, out_help);
}

app::ExperimentConfig load(const Common& c) {
  app::ExperimentConfig config = c.config_path.empty() ? app::default_config() : app::load_config(c.config_path);
  if (c.seed) config.seeds.root = *c.seed;
  app::validate(config);
  return config;
}

void progress(const std::string& message) { std::cerr << message << std::endl; }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Patch-wise conditional diffusion on lung phantoms, with a segmentation utility test"};
  cli.require_subcommand(1);

  Common common;
  std::string arm_name;
  std::string checkpoint;
  std::string masks;
  std::string split;
  std::optional<int> per_mask;
  bool resume = false;

  auto* make_data = cli.add_subcommand("make-data", "Generate the phantom dataset and its manifest");
  add_common(make_data, common, "Dataset directory (default: <work_dir>/data)");

  auto* train_diffusion = cli.add_subcommand("train-diffusion", "Train the denoiser on random patches");
  add_common(train_diffusion, common, "Checkpoint path (default: <work_dir>/diffusion/denoiser.pdck)");
  train_diffusion->add_flag("--resume", resume, "Continue from the checkpoint at --out if it exists");

  auto* sample = cli.add_subcommand("sample", "Sample full images conditioned on masks");
  add_common(sample, common, "Output directory (required with --masks)");
  sample->add_option("--arm", arm_name, "synthetic: training masks; targeted: worst validation masks")
      ->check(CLI::IsMember({"synthetic", "targeted"}));
  sample->add_option("--masks", masks, "Any dataset manifest to take masks from (instead of --arm)")
      ->check(CLI::ExistingFile);
  sample->add_option("--split", split, "With --masks: only this split")->check(CLI::IsMember({"train", "val", "test"}));
  sample->add_option("--checkpoint", checkpoint, "Denoiser checkpoint (default: the config's)")
      ->check(CLI::ExistingFile);
  sample->add_option("--per-mask", per_mask, "Samples per mask")->check(CLI::PositiveNumber);

  auto* train_seg = cli.add_subcommand("train-seg", "Train one segmenter on an arm's training data");
  add_common(train_seg, common, "Segmenter checkpoint path");
  train_seg->add_option("--arm", arm_name, "Training data")
      ->required()
      ->check(CLI::IsMember({"real", "synthetic", "targeted"}));
  train_seg->get_option("--out")->required();

  auto* evaluate = cli.add_subcommand("evaluate", "Score a segmenter on the validation and test splits");
  add_common(evaluate, common, "Per-case results (JSON)");
  evaluate->add_option("--checkpoint", checkpoint, "Segmenter checkpoint")->required()->check(CLI::ExistingFile);

  auto* run_experiment = cli.add_subcommand("run-experiment", "Run one arm of the utility experiment");
  add_common(run_experiment, common, "");
  run_experiment->add_option("--arm", arm_name, "real, synthetic, targeted, or all (the whole pipeline)")
      ->required()
      ->check(CLI::IsMember({"real", "synthetic", "targeted", "all"}));

  auto* report = cli.add_subcommand("report", "Print the summary table of all finished arms");
  add_common(report, common, "Also write the table here (default: <work_dir>/reports/summary.txt)");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    const app::ExperimentConfig config = load(common);
    const app::WorkLayout lay = app::layout(config);

    if (make_data->parsed()) {
      const fs::path out = common.out.empty() ? lay.data_dir() : fs::path(common.out);
      const auto manifest = app::make_data(config, out);
      std::cout << "manifest " << (out / "manifest.json").string() << "\n"
                << "manifest_sha256 " << manifest_hash(manifest) << "\n"
                << "config_hash " << app::config_hash(config) << "\n";
    } else if (train_diffusion->parsed()) {
      const fs::path out = common.out.empty() ? lay.checkpoint() : fs::path(common.out);
      fs::path log = out;
      log.replace_extension(".jsonl");
      if (common.out.empty()) log = lay.train_log();
      if (!fs::exists(lay.data_manifest())) {
        throw app::PrerequisiteError("missing phantom dataset (" + lay.data_manifest().string() +
                                     "); run `pddpm make-data` with this config first");
      }
      const auto result = app::train_diffusion(config, load_manifest(lay.data_manifest()),
                                               app::TrainDiffusionOptions{out, log, resume}, progress);
      std::cout << "checkpoint " << out.string() << "\nstep " << result.final_step << "\nlog " << log.string()
                << "\n";
    } else if (sample->parsed()) {
      if (masks.empty() == arm_name.empty()) throw ArgumentError("sample: give exactly one of --arm or --masks");
      DatasetManifest out_manifest;
      fs::path out_dir;
      if (!arm_name.empty()) {
        if (!common.out.empty() || !checkpoint.empty() || per_mask || !split.empty()) {
          throw ArgumentError("sample --arm takes its masks, checkpoint, count and output location from the config");
        }
        out_manifest = app::sample_arm(config, segeval::parse_arm(arm_name), progress);
        out_dir = lay.synthetic_dir(segeval::parse_arm(arm_name));
      } else {
        if (common.out.empty()) throw ArgumentError("sample --masks requires --out");
        out_dir = common.out;
        const auto source = load_manifest(masks);
        std::vector<std::string> ids;
        for (const auto& e : source.entries) {
          if (split.empty() || e.split == parse_split(split)) ids.push_back(e.case_id);
        }
        const auto denoiser = app::load_denoiser(checkpoint.empty() ? lay.checkpoint() : fs::path(checkpoint));
        out_manifest = app::sample_dataset(denoiser, app::mask_sources(source, ids),
                                           per_mask.value_or(config.sampling.samples_per_mask),
                                           app::sampling_seed(config),
                                           SampleOptions{config.sampling.clip_min, config.sampling.clip_max}, out_dir,
                                           app::config_hash(config), progress);
      }
      std::cout << "manifest " << (out_dir / "manifest.json").string() << "\nimages " << out_manifest.entries.size()
                << "\nmanifest_sha256 " << manifest_hash(out_manifest) << "\n";
    } else if (train_seg->parsed()) {
      const Arm arm = segeval::parse_arm(arm_name);
      const auto data = app::arm_data(config, arm);
      segeval::check_no_leakage(data.train, data.test);
      const std::uint64_t seed = common.seed ? *common.seed : app::run_seeds(config).front();
      const auto seg = segeval::train_segmenter(data.train, seed, config.segmenter);
      app::save_checkpoint(app::segmenter_checkpoint(config, seg, arm, seed), common.out);
      std::cout << "checkpoint " << common.out << "\n";
    } else if (evaluate->parsed()) {
      const auto seg = app::load_segmenter(checkpoint);
      const auto data = app::arm_data(config, Arm::kReal);
      const auto val = segeval::score_cases(seg, data.val, config.segmenter.threshold);
      const auto test = segeval::score_cases(seg, data.test, config.segmenter.threshold);
      auto mean_of = [](const std::vector<segeval::DiceResult>& r) {
        double s = 0.0;
        for (const auto& d : r) s += d.dsc;
        return s / static_cast<double>(r.size());
      };
      std::printf("mean validation DSC %.4f\nmean test DSC %.4f\n", mean_of(val), mean_of(test));
      if (!common.out.empty()) {
        nlohmann::ordered_json j;
        j["checkpoint"] = checkpoint;
        j["config_hash"] = app::config_hash(config);
        j["mean_val_dsc"] = mean_of(val);
        j["mean_test_dsc"] = mean_of(test);
        for (const auto* split_scores : {&val, &test}) {
          auto& arr = j[split_scores == &val ? "val" : "test"];
          arr = nlohmann::ordered_json::array();
          for (const auto& d : *split_scores) arr.push_back({{"id", d.case_id}, {"dsc", d.dsc}});
        }
        write_text(common.out, j.dump(2) + "\n");
      }
    } else if (run_experiment->parsed()) {
      std::vector<segeval::UtilityReport> reports;
      if (arm_name == "all") {
        reports = app::run_pipeline(config, progress);
      } else {
        reports.push_back(app::run_arm(config, segeval::parse_arm(arm_name), progress));
        std::cout << "report " << lay.report(reports.back().arm).string() << "\n";
      }
      std::cout << app::report_text(reports);
    } else if (report->parsed()) {
      const auto reports = app::load_reports(config);
      const std::string text = app::report_text(reports);
      write_text(common.out.empty() ? lay.summary() : fs::path(common.out), text);
      std::cout << text;
    }
  } catch (const NumericalError& e) {
    std::cerr << "pddpm: numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "pddpm: " << e.what() << "\n";
    return kUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "pddpm: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "pddpm: error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
