#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pddpm/volume.hpp"

namespace pddpm {

struct IntensityLevels {
  float background = -1.0f;
  float lung = -0.6f;
  float vessel = 0.4f;
  float nodule = 0.6f;

  bool operator==(const IntensityLevels&) const = default;
};

// Procedural 2-D lung-slice phantom: two dark elliptical lung fields on a
// background, small bright vessel dots, and bright nodule disks. Only nodules
// enter the mask, and only with radius >= nodule_radius_range[0] >= 2 px.
struct PhantomSpec {
  std::vector<int> image_size{64, 64};
  std::array<int, 2> nodule_count_range{1, 3};
  std::array<double, 2> nodule_radius_range{2.0, 5.0};
  std::array<int, 2> vessel_count_range{4, 10};
  std::array<double, 2> vessel_radius_range{0.8, 1.5};
  IntensityLevels intensity;
  double noise_sigma = 0.05;
  bool allow_pleural_contact = true;
  // Chance that a nodule is placed touching the lung-field boundary.
  double pleural_contact_probability = 0.3;

  bool operator==(const PhantomSpec&) const = default;
};

// Throws ArgumentError listing the violated constraint.
void validate(const PhantomSpec& spec);

struct Ellipse {
  double cy, cx, ry, rx;

  bool contains(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
  }
};

struct Disk {
  double cy, cx, radius;

  bool contains(double y, double x) const {
    return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius;
  }
};

struct PhantomMetadata {
  std::array<Ellipse, 2> lungs;
  std::vector<Disk> nodules;
  std::vector<bool> pleural_contact;
  std::vector<Disk> vessels;
};

struct Phantom {
  Volume image;  // 1 channel, values in [-1, 1]
  Volume mask;   // 1 channel, union of nodule disks
  PhantomMetadata metadata;
};

// Deterministic in (spec, case_seed).
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t case_seed);

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split split);
Split parse_split(const std::string& name);

struct ManifestEntry {
  std::string case_id;
  Split split = Split::kTrain;
  std::string image;  // relative to the manifest directory
  std::string mask;
  std::string image_sha256;
  std::string mask_sha256;
  std::uint64_t seed = 0;
  // Synthetic entries: the case whose mask conditioned the sample.
  std::string source_case;
};

struct DatasetManifest {
  std::string kind = "phantom";  // "phantom" or "synthetic"
  std::uint64_t root_seed = 0;
  std::string config_hash;
  std::vector<ManifestEntry> entries;
  // Directory the relative paths resolve against; not serialized.
  std::filesystem::path root;

  std::vector<const ManifestEntry*> split(Split s) const;
  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
  const ManifestEntry* find(const std::string& case_id) const;
};

struct SplitCounts {
  int train = 200;
  int val = 50;
  int test = 50;

  int total() const { return train + val + test; }
  bool operator==(const SplitCounts&) const = default;
};

// Writes images/<id>.pdv, masks/<id>.pdv and manifest.json under out_dir
// (created when missing). Case seeds derive from root_seed by case index;
// splits are assigned train, then val, then test.
DatasetManifest build_dataset(const PhantomSpec& spec, const SplitCounts& counts, std::uint64_t root_seed,
                              const std::filesystem::path& out_dir, const std::string& config_hash = {});

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& root);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);
// SHA-256 of the serialized manifest.
std::string manifest_hash(const DatasetManifest& manifest);

// Every case id belongs to exactly one split; throws DataError otherwise.
void check_split_hygiene(const DatasetManifest& manifest);

struct LabeledCase {
  std::string case_id;
  std::string source_case;
  Volume image;
  Volume mask;
};

std::vector<LabeledCase> load_split(const DatasetManifest& manifest, Split split);

}  // namespace pddpm
