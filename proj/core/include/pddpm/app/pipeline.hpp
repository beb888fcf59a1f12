#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pddpm/app/checkpoint.hpp"
#include "pddpm/app/config.hpp"
#include "pddpm/diffusion.hpp"
#include "pddpm/error.hpp"
#include "pddpm/phantom.hpp"
#include "pddpm/segeval/experiment.hpp"

namespace pddpm::app {

namespace fs = std::filesystem;

// Artifact locations under the configured work directory.
struct WorkLayout {
  fs::path root;

  fs::path data_dir() const { return root / "data"; }
  fs::path data_manifest() const { return data_dir() / "manifest.json"; }
  fs::path checkpoint() const { return root / "diffusion" / "denoiser.pdck"; }
  fs::path train_log() const { return root / "diffusion" / "train_log.jsonl"; }
  fs::path synthetic_dir(segeval::Arm arm) const { return root / "synthetic" / segeval::arm_name(arm); }
  fs::path synthetic_manifest(segeval::Arm arm) const { return synthetic_dir(arm) / "manifest.json"; }
  fs::path report(segeval::Arm arm) const { return root / "reports" / (std::string(segeval::arm_name(arm)) + ".json"); }
  fs::path summary() const { return root / "reports" / "summary.txt"; }
};

WorkLayout layout(const ExperimentConfig& config);

using Progress = std::function<void(const std::string&)>;

// Missing or stale input artifact; the message names the command to run.
class PrerequisiteError : public DataError {
 public:
  using DataError::DataError;
};

// ---- make-data

DatasetManifest make_data(const ExperimentConfig& config, const fs::path& out_dir);

// ---- train-diffusion

struct TrainDiffusionOptions {
  fs::path checkpoint;
  fs::path log;  // JSON lines: step, loss, wall_time, activation_elements
  bool resume = false;
};

struct TrainDiffusionResult {
  std::uint64_t start_step = 0;
  std::uint64_t final_step = 0;
  std::vector<float> losses;  // one per step run here
  std::vector<std::size_t> activation_elements;
};

// Patch-wise training. The batch of step k depends only on (root seed, k),
// so resuming from a checkpoint written at step k reproduces the
// uninterrupted run bit for bit. On divergence the last periodic checkpoint
// is kept and NumericalError is thrown.
TrainDiffusionResult train_diffusion(const ExperimentConfig& config, const DatasetManifest& data,
                                     const TrainDiffusionOptions& options, const Progress& progress = {});

Checkpoint denoiser_checkpoint(const ExperimentConfig& config, const UNetDenoiser& model);

struct LoadedDenoiser {
  fs::path source;
  UNetDenoiser model;
  NoiseSchedule schedule;
  std::vector<int> image_extents;
  std::string config_hash;
};

LoadedDenoiser load_denoiser(const fs::path& path);

// ---- sample

struct MaskSource {
  std::string case_id;
  fs::path mask_path;
  std::string mask_sha256;
  std::uint64_t stream = 0;  // position in the source manifest
};

std::vector<MaskSource> mask_sources(const DatasetManifest& manifest, const std::vector<std::string>& case_ids);

// One image per (mask, k) for k < per_mask, seeded by (seed, stream, k).
// Each conditioning mask is copied verbatim next to its samples. Throws
// DataError naming the file when a mask's extents differ from the model's.
DatasetManifest sample_dataset(const LoadedDenoiser& denoiser, const std::vector<MaskSource>& masks, int per_mask,
                               std::uint64_t seed, const SampleOptions& options, const fs::path& out_dir,
                               const std::string& config_hash, const Progress& progress = {});

// Masks for an arm: training masks (synthetic) or the real arm's worst
// validation masks (targeted).
std::vector<std::string> conditioning_cases(const ExperimentConfig& config, segeval::Arm arm);

DatasetManifest sample_arm(const ExperimentConfig& config, segeval::Arm arm, const Progress& progress = {});

// ---- train-seg / evaluate

segeval::ArmData arm_data(const ExperimentConfig& config, segeval::Arm arm);

Checkpoint segmenter_checkpoint(const ExperimentConfig& config, const segeval::Segmenter& segmenter,
                                segeval::Arm arm, std::uint64_t seed);
segeval::Segmenter load_segmenter(const fs::path& path);

// ---- run-experiment / report

segeval::UtilityReport run_arm(const ExperimentConfig& config, segeval::Arm arm, const Progress& progress = {});

// Every arm that has a report, in real / synthetic / targeted order.
std::vector<segeval::UtilityReport> load_reports(const ExperimentConfig& config);
std::string report_text(std::span<const segeval::UtilityReport> reports);

// make-data, train-diffusion, then each arm (sampling as needed), then the
// summary table.
std::vector<segeval::UtilityReport> run_pipeline(const ExperimentConfig& config, const Progress& progress = {});

std::uint64_t sampling_seed(const ExperimentConfig& config);
std::uint64_t denoiser_init_seed(const ExperimentConfig& config);

}  // namespace pddpm::app
