#include "pddpm/app/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "../bytes.hpp"
#include "json.hpp"
#include "pddpm/error.hpp"
#include "pddpm/hashing.hpp"
#include "pddpm/rng.hpp"

namespace pddpm::app {

namespace {

using Json = nlohmann::ordered_json;
using segeval::Arm;

constexpr std::uint64_t kInitStream = 0x64696e69;    // "dini"
constexpr std::uint64_t kStepStream = 0x64737470;    // "dstp"
constexpr std::uint64_t kSampleStream = 0x736d706c;  // "smpl"
constexpr const char* kSegmenterContract = "image";

void say(const Progress& progress, const std::string& message) {
  if (progress) progress(message);
}

std::string short_hash(const std::string& h) { return h.substr(0, 12); }

void require_file(const fs::path& path, const std::string& what, const std::string& command) {
  if (!fs::exists(path)) {
    throw PrerequisiteError("missing " + what + " (" + path.string() + "); run `pddpm " + command +
                            "` with this config first");
  }
}

void require_hash(const std::string& found, const std::string& expected, const std::string& what,
                  const std::string& command) {
  if (found != expected) {
    throw PrerequisiteError(what + " was produced by config " + short_hash(found) + ", not the current config " +
                            short_hash(expected) + "; rerun `pddpm " + command + "`");
  }
}

Json arch_to_json(const nn::UNetSpec& s) {
  return Json{{"in_channels", s.in_channels}, {"out_channels", s.out_channels}, {"base_width", s.base_width},
              {"multipliers", s.multipliers}, {"time_dim", s.time_dim},       {"groups", s.groups}};
}

nn::UNetSpec arch_from_json(const nlohmann::json& j) {
  nn::UNetSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.out_channels = j.at("out_channels").get<int>();
  s.base_width = j.at("base_width").get<int>();
  s.multipliers = j.at("multipliers").get<std::vector<int>>();
  s.time_dim = j.at("time_dim").get<int>();
  s.groups = j.at("groups").get<int>();
  return s;
}

nlohmann::json parse_metadata(const Checkpoint& ck, const fs::path& path, const std::string& kind) {
  try {
    auto j = nlohmann::json::parse(ck.metadata);
    if (j.at("kind").get<std::string>() != kind) {
      throw DataError(path.string() + " is a " + j.at("kind").get<std::string>() + " checkpoint, expected " + kind);
    }
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
}

DatasetManifest load_data(const ExperimentConfig& config) {
  const auto lay = layout(config);
  require_file(lay.data_manifest(), "phantom dataset", "make-data");
  auto manifest = load_manifest(lay.data_manifest());
  require_hash(manifest.config_hash, config_hash(config), "dataset " + lay.data_manifest().string(), "make-data");
  return manifest;
}

DatasetManifest load_synthetic(const ExperimentConfig& config, Arm arm) {
  const auto lay = layout(config);
  const std::string command = std::string("sample --arm ") + segeval::arm_name(arm);
  require_file(lay.synthetic_manifest(arm), std::string(segeval::arm_name(arm)) + " samples", command);
  auto manifest = load_manifest(lay.synthetic_manifest(arm));
  require_hash(manifest.config_hash, config_hash(config), "sample set " + lay.synthetic_manifest(arm).string(),
               command);
  return manifest;
}

segeval::UtilityReport load_baseline(const ExperimentConfig& config) {
  const auto lay = layout(config);
  require_file(lay.report(Arm::kReal), "real-data benchmark report", "run-experiment --arm real");
  auto report = segeval::load_report(lay.report(Arm::kReal));
  require_hash(report.config_hash, config_hash(config), "report " + lay.report(Arm::kReal).string(),
               "run-experiment --arm real");
  return report;
}

LoadedDenoiser load_current_denoiser(const ExperimentConfig& config) {
  const auto lay = layout(config);
  require_file(lay.checkpoint(), "denoiser checkpoint", "train-diffusion");
  auto denoiser = load_denoiser(lay.checkpoint());
  require_hash(denoiser.config_hash, config_hash(config), "checkpoint " + lay.checkpoint().string(),
               "train-diffusion");
  return denoiser;
}

// Keeps log lines up to and including `last_step` (resume) or none.
void reset_log(const fs::path& log, std::uint64_t last_step) {
  std::vector<std::string> kept;
  if (last_step > 0 && fs::exists(log)) {
    std::ifstream in(log);
    for (std::string line; std::getline(in, line);) {
      try {
        if (nlohmann::json::parse(line).at("step").get<std::uint64_t>() <= last_step) kept.push_back(line);
      } catch (const nlohmann::json::exception&) {
      }
    }
  }
  if (log.has_parent_path()) fs::create_directories(log.parent_path());
  std::ofstream out(log, std::ios::trunc);
  for (const auto& line : kept) out << line << '\n';
}

double mean_delta(const std::vector<segeval::CaseDelta>& deltas) {
  if (deltas.empty()) return 0.0;
  double s = 0.0;
  for (const auto& d : deltas) s += d.delta;
  return s / static_cast<double>(deltas.size());
}

}  // namespace

WorkLayout layout(const ExperimentConfig& config) { return WorkLayout{config.work_dir}; }

std::uint64_t sampling_seed(const ExperimentConfig& config) { return derive_seed(config.seeds.root, kSampleStream); }

std::uint64_t denoiser_init_seed(const ExperimentConfig& config) { return derive_seed(config.seeds.root, kInitStream); }

DatasetManifest make_data(const ExperimentConfig& config, const fs::path& out_dir) {
  validate(config);
  return build_dataset(config.phantom, config.splits, config.seeds.root, out_dir, config_hash(config));
}

Checkpoint denoiser_checkpoint(const ExperimentConfig& config, const UNetDenoiser& model) {
  Json meta{{"kind", "denoiser"},
            {"arch", arch_to_json(model.spec())},
            {"schedule",
             Json{{"timesteps", config.schedule.timesteps},
                  {"beta_start", config.schedule.beta_start},
                  {"beta_end", config.schedule.beta_end}}},
            {"image_extents", config.phantom.image_size},
            {"patch_size", config.patch_size}};
  return Checkpoint{config_hash(config), channel_order_contract(static_cast<int>(config.phantom.image_size.size())),
                    meta.dump(), model.params()};
}

LoadedDenoiser load_denoiser(const fs::path& path) {
  Checkpoint ck = load_checkpoint(path);
  const auto meta = parse_metadata(ck, path, "denoiser");
  try {
    auto extents = meta.at("image_extents").get<std::vector<int>>();
    const std::string expected = channel_order_contract(static_cast<int>(extents.size()));
    if (ck.contract != expected) {
      throw FormatError(FormatError::Kind::kContract, "checkpoint " + path.string() + ": channel order '" +
                                                          ck.contract + "', this build expects '" + expected + "'");
    }
    const auto& s = meta.at("schedule");
    auto schedule = NoiseSchedule::linear(s.at("timesteps").get<int>(), s.at("beta_start").get<double>(),
                                          s.at("beta_end").get<double>());
    return LoadedDenoiser{path, UNetDenoiser(arch_from_json(meta.at("arch")), std::move(ck.params)),
                          std::move(schedule), std::move(extents), ck.config_hash};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
}

TrainDiffusionResult train_diffusion(const ExperimentConfig& config, const DatasetManifest& data,
                                     const TrainDiffusionOptions& options, const Progress& progress) {
  validate(config);
  const std::string hash = config_hash(config);
  require_hash(data.config_hash, hash, "dataset", "make-data");
  const auto cases = load_split(data, Split::kTrain);
  std::vector<TrainingPair> pairs;
  for (const auto& c : cases) {
    if (c.image.extents() != config.phantom.image_size) {
      throw DataError("train-diffusion: case " + c.case_id + " has extents " + shape_str(c.image.extents()));
    }
    pairs.push_back({c.image, c.mask});
  }
  const auto schedule = NoiseSchedule::linear(config.schedule);
  const auto grid = coordinate_grid(config.phantom.image_size);
  const PatchOptions patch{config.patch_size, config.oversample_nonempty};
  const auto& tc = config.diffusion_training;
  const std::string contract = channel_order_contract(static_cast<int>(config.phantom.image_size.size()));

  std::optional<UNetDenoiser> model;
  if (options.resume && fs::exists(options.checkpoint)) {
    Checkpoint ck = load_checkpoint(options.checkpoint, contract);
    if (ck.config_hash != hash) {
      throw PrerequisiteError("cannot resume: " + options.checkpoint.string() + " was produced by config " +
                              short_hash(ck.config_hash) + ", not " + short_hash(hash));
    }
    model.emplace(config.denoiser, std::move(ck.params));
    say(progress, "resuming from step " + std::to_string(model->params().step()));
  } else {
    model.emplace(config.denoiser, denoiser_init_seed(config));
    save_checkpoint(denoiser_checkpoint(config, *model), options.checkpoint);
  }

  TrainDiffusionResult result;
  result.start_step = model->params().step();
  const auto total = static_cast<std::uint64_t>(tc.steps);
  if (result.start_step > total) {
    throw ArgumentError("train-diffusion: checkpoint is at step " + std::to_string(result.start_step) +
                        ", beyond the configured " + std::to_string(total) + " steps");
  }
  reset_log(options.log, result.start_step);
  std::ofstream log(options.log, std::ios::app);
  const auto started = std::chrono::steady_clock::now();
  std::uint64_t last_saved = result.start_step;
  const std::uint64_t train_root = derive_seed(config.seeds.root, kStepStream);

  for (std::uint64_t step = result.start_step; step < total; ++step) {
    Rng rng(derive_seed(train_root, step));
    const auto batch = draw_batch(pairs, tc.batch_size, grid, patch, CropMode::kPatch, schedule, rng);
    StepStats stats;
    try {
      stats = train_step(*model, batch, schedule, tc.adam);
    } catch (const NumericalError& e) {
      throw NumericalError("train-diffusion: diverged at step " + std::to_string(step + 1) + " (" + e.what() +
                           "); last good checkpoint (step " + std::to_string(last_saved) + ") kept at " +
                           options.checkpoint.string());
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log << Json{{"step", step + 1},
                {"loss", stats.loss},
                {"wall_time", wall},
                {"activation_elements", stats.activation_elements}}
               .dump()
        << '\n';
    result.losses.push_back(stats.loss);
    result.activation_elements.push_back(stats.activation_elements);
    if ((step + 1) % static_cast<std::uint64_t>(tc.checkpoint_every) == 0 && step + 1 < total) {
      log.flush();
      save_checkpoint(denoiser_checkpoint(config, *model), options.checkpoint);
      last_saved = step + 1;
    }
    if ((step + 1) % static_cast<std::uint64_t>(tc.log_every) == 0) {
      double window = 0.0;
      const std::size_t n = std::min<std::size_t>(result.losses.size(), static_cast<std::size_t>(tc.log_every));
      for (std::size_t i = result.losses.size() - n; i < result.losses.size(); ++i) window += result.losses[i];
      char line[128];
      std::snprintf(line, sizeof(line), "step %llu/%llu  loss %.5f  (%.1fs)", static_cast<unsigned long long>(step + 1),
                    static_cast<unsigned long long>(total), window / static_cast<double>(n), wall);
      say(progress, line);
    }
  }
  save_checkpoint(denoiser_checkpoint(config, *model), options.checkpoint);
  result.final_step = model->params().step();
  return result;
}

std::vector<MaskSource> mask_sources(const DatasetManifest& manifest, const std::vector<std::string>& case_ids) {
  std::vector<MaskSource> out;
  for (const auto& id : case_ids) {
    const ManifestEntry* e = manifest.find(id);
    if (!e) throw DataError("sample: case '" + id + "' is not in the mask manifest");
    const auto stream = static_cast<std::uint64_t>(e - manifest.entries.data());
    out.push_back({e->case_id, manifest.resolve(e->mask), e->mask_sha256, stream});
  }
  return out;
}

DatasetManifest sample_dataset(const LoadedDenoiser& denoiser, const std::vector<MaskSource>& masks, int per_mask,
                               std::uint64_t seed, const SampleOptions& options, const fs::path& out_dir,
                               const std::string& config_hash, const Progress& progress) {
  if (per_mask < 1) throw ArgumentError("sample: samples per mask must be >= 1");
  const auto grid = coordinate_grid(denoiser.image_extents);
  DatasetManifest manifest;
  manifest.kind = "synthetic";
  manifest.root_seed = seed;
  manifest.config_hash = config_hash;
  manifest.root = out_dir;
  // Check every mask before the first (slow) sample.
  std::vector<std::vector<unsigned char>> mask_bytes;
  for (const auto& src : masks) {
    auto bytes = detail::read_file(src.mask_path.string());
    if (!src.mask_sha256.empty() && sha256_hex(bytes) != src.mask_sha256) {
      throw DataError("sample: " + src.mask_path.string() + " does not match its recorded SHA-256");
    }
    const Volume mask = decode_volume(bytes);
    if (mask.extents() != denoiser.image_extents) {
      throw DataError("sample: mask " + src.mask_path.string() + " has extents " + shape_str(mask.extents()) +
                      " but checkpoint " + denoiser.source.string() + " was trained on " +
                      shape_str(denoiser.image_extents));
    }
    mask_bytes.push_back(std::move(bytes));
  }
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& src = masks[i];
    const Volume mask = decode_volume(mask_bytes[i]);
    const std::string mask_rel = "masks/" + src.case_id + ".pdv";
    detail::write_file_atomic((out_dir / mask_rel).string(), mask_bytes[i]);
    const Volume condition = full_condition(mask, grid);
    for (int k = 0; k < per_mask; ++k) {
      ManifestEntry e;
      char id[96];
      std::snprintf(id, sizeof(id), "syn_%s_%02d", src.case_id.c_str(), k);
      e.case_id = id;
      e.split = Split::kTrain;
      e.seed = derive_seed(seed, src.stream, static_cast<std::uint64_t>(k));
      Rng rng(e.seed);
      const Volume image = sample(denoiser.model, condition, denoiser.schedule, rng, options);
      const auto image_bytes = encode_volume(image);
      e.image = "images/" + e.case_id + ".pdv";
      e.mask = mask_rel;
      detail::write_file_atomic((out_dir / e.image).string(), image_bytes);
      e.image_sha256 = sha256_hex(image_bytes);
      e.mask_sha256 = sha256_hex(mask_bytes[i]);
      e.source_case = src.case_id;
      manifest.entries.push_back(std::move(e));
    }
    say(progress, "sampled " + std::to_string((i + 1) * static_cast<std::size_t>(per_mask)) + "/" +
                      std::to_string(masks.size() * static_cast<std::size_t>(per_mask)));
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

std::vector<std::string> conditioning_cases(const ExperimentConfig& config, Arm arm) {
  std::vector<std::string> ids;
  if (arm == Arm::kSynthetic) {
    const auto data = load_data(config);
    for (const ManifestEntry* e : data.split(Split::kTrain)) ids.push_back(e->case_id);
  } else if (arm == Arm::kTargeted) {
    ids = segeval::worst_validation_cases(load_baseline(config));
  } else {
    throw ArgumentError("the real arm uses no synthetic samples");
  }
  return ids;
}

DatasetManifest sample_arm(const ExperimentConfig& config, Arm arm, const Progress& progress) {
  validate(config);
  const auto ids = conditioning_cases(config, arm);
  const auto data = load_data(config);
  const auto denoiser = load_current_denoiser(config);
  const int per_mask = arm == Arm::kTargeted ? config.sampling.targeted_per_mask : config.sampling.samples_per_mask;
  const auto out = layout(config).synthetic_dir(arm);
  fs::remove_all(out);
  say(progress, std::string("sampling ") + std::to_string(ids.size() * static_cast<std::size_t>(per_mask)) +
                    " images for the " + segeval::arm_name(arm) + " arm");
  return sample_dataset(denoiser, mask_sources(data, ids), per_mask, sampling_seed(config),
                        SampleOptions{config.sampling.clip_min, config.sampling.clip_max}, out, config_hash(config),
                        progress);
}

segeval::ArmData arm_data(const ExperimentConfig& config, Arm arm) {
  const auto data = load_data(config);
  segeval::ArmData out;
  out.val = load_split(data, Split::kVal);
  out.test = load_split(data, Split::kTest);
  if (arm != Arm::kSynthetic) out.train = load_split(data, Split::kTrain);
  if (arm != Arm::kReal) {
    for (auto& c : load_split(load_synthetic(config, arm), Split::kTrain)) out.train.push_back(std::move(c));
  }
  return out;
}

Checkpoint segmenter_checkpoint(const ExperimentConfig& config, const segeval::Segmenter& segmenter, Arm arm,
                                std::uint64_t seed) {
  Json meta{{"kind", "segmenter"},
            {"arch", arch_to_json(segmenter.arch)},
            {"image_extents", segmenter.image_extents},
            {"arm", segeval::arm_name(arm)},
            {"seed", seed}};
  return Checkpoint{config_hash(config), kSegmenterContract, meta.dump(), segmenter.params};
}

segeval::Segmenter load_segmenter(const fs::path& path) {
  Checkpoint ck = load_checkpoint(path, std::string(kSegmenterContract));
  const auto meta = parse_metadata(ck, path, "segmenter");
  try {
    segeval::Segmenter seg{arch_from_json(meta.at("arch")), std::move(ck.params),
                           meta.at("image_extents").get<std::vector<int>>()};
    nn::ParamStore fresh;
    nn::UNet(seg.arch).init_params(fresh, 0);
    for (const auto& e : fresh.entries()) {
      if (!seg.params.contains(e.name) || seg.params.at(e.name).shape() != e.value.shape()) {
        throw DataError(path.string() + ": parameter '" + e.name + "' missing or mis-shaped");
      }
    }
    return seg;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint metadata: " + e.what());
  }
}

segeval::UtilityReport run_arm(const ExperimentConfig& config, Arm arm, const Progress& progress) {
  validate(config);
  std::optional<segeval::UtilityReport> baseline;
  if (arm != Arm::kReal) baseline = load_baseline(config);
  const auto data = arm_data(config, arm);
  const auto seeds = run_seeds(config);
  int run = 0;
  segeval::SegTrainLog log;
  log.on_step = [&](int iteration, float loss) {
    if (iteration + 1 == config.segmenter.iterations) {
      ++run;
      char line[128];
      std::snprintf(line, sizeof(line), "%s arm: run %d/%d trained (final loss %.4f)", segeval::arm_name(arm), run,
                    segeval::kRunsPerArm, loss);
      say(progress, line);
    }
  };
  say(progress, std::string(segeval::arm_name(arm)) + " arm: " + std::to_string(data.train.size()) +
                    " training cases, " + std::to_string(seeds.size()) + " runs");
  auto report = segeval::run_utility_experiment(arm, data, seeds, config.segmenter,
                                                baseline ? &*baseline : nullptr, log);
  report.config_hash = config_hash(config);
  if (arm == Arm::kTargeted) {
    std::set<std::string> seen;
    for (const auto& c : data.train) {
      if (!c.source_case.empty() && seen.insert(c.source_case).second) report.targeted_cases.push_back(c.source_case);
    }
  }
  segeval::save_report(report, layout(config).report(arm));
  return report;
}

std::vector<segeval::UtilityReport> load_reports(const ExperimentConfig& config) {
  std::vector<segeval::UtilityReport> out;
  const auto lay = layout(config);
  for (Arm arm : {Arm::kReal, Arm::kSynthetic, Arm::kTargeted}) {
    if (!fs::exists(lay.report(arm))) continue;
    auto report = segeval::load_report(lay.report(arm));
    require_hash(report.config_hash, config_hash(config), "report " + lay.report(arm).string(),
                 std::string("run-experiment --arm ") + segeval::arm_name(arm));
    out.push_back(std::move(report));
  }
  if (out.empty()) throw PrerequisiteError("no reports found under " + (lay.root / "reports").string() +
                                           "; run `pddpm run-experiment --arm real` with this config first");
  return out;
}

std::string report_text(std::span<const segeval::UtilityReport> reports) {
  std::ostringstream os;
  os << segeval::summary_table(reports);
  for (const auto& r : reports) {
    if (!r.deltas) continue;
    char line[200];
    std::snprintf(line, sizeof(line),
                  "%s vs Real, mean per-case DSC change: worst validation %+.4f (n=%zu), other validation %+.4f "
                  "(n=%zu), test %+.4f (n=%zu)\n",
                  segeval::arm_label(r.arm), mean_delta(r.deltas->worst_val), r.deltas->worst_val.size(),
                  mean_delta(r.deltas->other_val), r.deltas->other_val.size(), mean_delta(r.deltas->test),
                  r.deltas->test.size());
    os << line;
  }
  return os.str();
}

std::vector<segeval::UtilityReport> run_pipeline(const ExperimentConfig& config, const Progress& progress) {
  validate(config);
  const auto lay = layout(config);
  say(progress, "make-data -> " + lay.data_dir().string());
  const auto data = make_data(config, lay.data_dir());
  say(progress, "train-diffusion -> " + lay.checkpoint().string());
  train_diffusion(config, data, TrainDiffusionOptions{lay.checkpoint(), lay.train_log(), false}, progress);
  std::vector<segeval::UtilityReport> reports;
  reports.push_back(run_arm(config, Arm::kReal, progress));
  sample_arm(config, Arm::kSynthetic, progress);
  reports.push_back(run_arm(config, Arm::kSynthetic, progress));
  sample_arm(config, Arm::kTargeted, progress);
  reports.push_back(run_arm(config, Arm::kTargeted, progress));
  const std::string text = report_text(reports);
  detail::write_file_atomic(lay.summary().string(),
                            std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  return reports;
}

}  // namespace pddpm::app
