#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pddpm/nn/adam.hpp"
#include "pddpm/nn/unet.hpp"
#include "pddpm/phantom.hpp"
#include "pddpm/schedule.hpp"
#include "pddpm/segeval/segmenter.hpp"

namespace pddpm::app {

struct DiffusionTraining {
  int steps = 3000;
  int batch_size = 8;
  nn::AdamConfig adam{};
  int log_every = 50;
  int checkpoint_every = 500;

  bool operator==(const DiffusionTraining&) const = default;
};

struct SamplingConfig {
  float clip_min = -1.0f;
  float clip_max = 1.0f;
  // Synthetic images drawn per training mask (synthetic arm) and per
  // worst-validation mask (targeted arm).
  int samples_per_mask = 1;
  int targeted_per_mask = 2;

  bool operator==(const SamplingConfig&) const = default;
};

struct SeedConfig {
  std::uint64_t root = 20240501;
  // Segmenter run seeds; empty derives segeval::kRunsPerArm seeds from root.
  std::vector<std::uint64_t> runs;

  bool operator==(const SeedConfig&) const = default;
};

struct ExperimentConfig {
  PhantomSpec phantom;
  SplitCounts splits;
  ScheduleParams schedule;
  std::vector<int> patch_size{32, 32};
  bool oversample_nonempty = false;
  nn::UNetSpec denoiser;  // in_channels = 1 + 1 + D
  DiffusionTraining diffusion_training;
  SamplingConfig sampling;
  segeval::SegmenterConfig segmenter;
  SeedConfig seeds;
  std::filesystem::path work_dir = "work";

  bool operator==(const ExperimentConfig&) const;
};

ExperimentConfig default_config();

// Every violated constraint, each prefixed by the key path (e.g.
// "splits.train: must be >= 1"). Empty means valid.
std::vector<std::string> config_errors(const ExperimentConfig& config);

// Throws ConfigError listing all problems, one per line.
void validate(const ExperimentConfig& config);

// Parses and validates. Missing keys keep their defaults; unknown keys, type
// mismatches and constraint violations are all reported together.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical form: every field, fixed key order.
std::string config_to_json(const ExperimentConfig& config);

// SHA-256 (hex) of the canonical form with paths excluded, so relocating the
// work directory does not change provenance.
std::string config_hash(const ExperimentConfig& config);

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& config);

}  // namespace pddpm::app
