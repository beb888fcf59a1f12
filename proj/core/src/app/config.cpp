#include "pddpm/app/config.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "../bytes.hpp"
#include "json.hpp"
#include "pddpm/diffusion.hpp"
#include "pddpm/error.hpp"
#include "pddpm/hashing.hpp"
#include "pddpm/rng.hpp"
#include "pddpm/segeval/stats.hpp"

namespace pddpm::app {

namespace {

using Json = nlohmann::ordered_json;
constexpr std::uint64_t kRunStream = 0x73656772;  // "segr"

// Shortest decimal form of a float, so 1e-4f serializes as 0.0001.
double as_decimal(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::strtod(std::string(buf, res.ptr).c_str(), nullptr);
}

std::string type_name(const nlohmann::json& j) { return j.type_name(); }

// Walks one JSON object, recording type errors and unknown keys under a
// dotted key path.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object, got " + type_name(j_));
  }

  ~Reader() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) fail(key_path(key), "unknown key");
    }
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  const nlohmann::json* find(const std::string& key) {
    seen_.insert(key);
    if (!j_.is_object()) return nullptr;
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void fail(const std::string& where, const std::string& what) { errors_.push_back(where + ": " + what); }

  void get(const std::string& key, int& out) {
    if (const auto* v = find(key)) {
      if (v->is_number_integer() && *v >= std::numeric_limits<int>::min() && *v <= std::numeric_limits<int>::max()) {
        out = v->get<int>();
      } else {
        fail(key_path(key), "expected an integer, got " + v->dump());
      }
    }
  }

  void get(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        out = v->get<std::uint64_t>();
      } else {
        fail(key_path(key), "expected a non-negative integer, got " + v->dump());
      }
    }
  }

  void get(const std::string& key, double& out) {
    if (const auto* v = find(key)) {
      if (v->is_number()) {
        out = v->get<double>();
      } else {
        fail(key_path(key), "expected a number, got " + v->dump());
      }
    }
  }

  void get(const std::string& key, float& out) {
    double d = out;
    get(key, d);
    out = static_cast<float>(d);
  }

  void get(const std::string& key, bool& out) {
    if (const auto* v = find(key)) {
      if (v->is_boolean()) {
        out = v->get<bool>();
      } else {
        fail(key_path(key), "expected true or false, got " + v->dump());
      }
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (v->is_string()) {
        out = v->get<std::string>();
      } else {
        fail(key_path(key), "expected a string, got " + v->dump());
      }
    }
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    const auto* v = find(key);
    if (!v) return;
    if (!v->is_array()) {
      fail(key_path(key), "expected an array, got " + type_name(*v));
      return;
    }
    std::vector<T> values;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      const bool ok = std::is_integral_v<T> ? e.is_number_integer() && (!std::is_unsigned_v<T> || e >= 0)
                                            : e.is_number();
      if (!ok) {
        fail(key_path(key) + "[" + std::to_string(i) + "]", "expected a number, got " + e.dump());
        return;
      }
      values.push_back(e.get<T>());
    }
    out = std::move(values);
  }

  template <typename T, std::size_t N>
  void get_array(const std::string& key, std::array<T, N>& out) {
    std::vector<T> v(out.begin(), out.end());
    const std::size_t before = errors_.size();
    get_list(key, v);
    if (errors_.size() != before) return;
    if (v.size() != N) {
      fail(key_path(key), "expected " + std::to_string(N) + " values, got " + std::to_string(v.size()));
      return;
    }
    std::copy(v.begin(), v.end(), out.begin());
  }

  // Nested object; absent keys yield an empty object so defaults stay.
  const nlohmann::json& object(const std::string& key) {
    static const nlohmann::json empty = nlohmann::json::object();
    const auto* v = find(key);
    return v ? *v : empty;
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void read_adam(Reader& parent, const std::string& key, nn::AdamConfig& adam, std::vector<std::string>& errors) {
  Reader r(parent.object(key), parent.key_path(key), errors);
  r.get("lr", adam.lr);
  r.get("beta1", adam.beta1);
  r.get("beta2", adam.beta2);
  r.get("eps", adam.eps_hat);
}

void read_arch(Reader& parent, const std::string& key, nn::UNetSpec& spec, std::vector<std::string>& errors,
               bool timed) {
  Reader r(parent.object(key), parent.key_path(key), errors);
  r.get("base_width", spec.base_width);
  r.get_list("multipliers", spec.multipliers);
  if (timed) r.get("time_dim", spec.time_dim);
  r.get("groups", spec.groups);
}

Json adam_json(const nn::AdamConfig& a) {
  return Json{{"lr", as_decimal(a.lr)}, {"beta1", as_decimal(a.beta1)}, {"beta2", as_decimal(a.beta2)},
              {"eps", as_decimal(a.eps_hat)}};
}

Json config_json(const ExperimentConfig& c, bool with_paths) {
  const auto& p = c.phantom;
  Json j;
  j["phantom"] = Json{{"image_size", p.image_size},
                      {"nodule_count", p.nodule_count_range},
                      {"nodule_radius", p.nodule_radius_range},
                      {"vessel_count", p.vessel_count_range},
                      {"vessel_radius", p.vessel_radius_range},
                      {"intensity",
                       Json{{"background", as_decimal(p.intensity.background)},
                            {"lung", as_decimal(p.intensity.lung)},
                            {"vessel", as_decimal(p.intensity.vessel)},
                            {"nodule", as_decimal(p.intensity.nodule)}}},
                      {"noise_sigma", p.noise_sigma},
                      {"allow_pleural_contact", p.allow_pleural_contact},
                      {"pleural_contact_probability", p.pleural_contact_probability}};
  j["splits"] = Json{{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}};
  j["schedule"] = Json{{"timesteps", c.schedule.timesteps},
                       {"beta_start", c.schedule.beta_start},
                       {"beta_end", c.schedule.beta_end}};
  j["patch"] = Json{{"size", c.patch_size}, {"oversample_nonempty", c.oversample_nonempty}};
  j["denoiser"] = Json{{"base_width", c.denoiser.base_width},
                       {"multipliers", c.denoiser.multipliers},
                       {"time_dim", c.denoiser.time_dim},
                       {"groups", c.denoiser.groups}};
  const auto& d = c.diffusion_training;
  j["diffusion_training"] = Json{{"steps", d.steps},
                                 {"batch_size", d.batch_size},
                                 {"adam", adam_json(d.adam)},
                                 {"log_every", d.log_every},
                                 {"checkpoint_every", d.checkpoint_every}};
  j["sampling"] = Json{{"clip_min", as_decimal(c.sampling.clip_min)},
                       {"clip_max", as_decimal(c.sampling.clip_max)},
                       {"samples_per_mask", c.sampling.samples_per_mask},
                       {"targeted_per_mask", c.sampling.targeted_per_mask}};
  const auto& s = c.segmenter;
  j["segmenter"] = Json{{"arch",
                         Json{{"base_width", s.arch.base_width},
                              {"multipliers", s.arch.multipliers},
                              {"groups", s.arch.groups}}},
                        {"iterations", s.iterations},
                        {"batch_size", s.batch_size},
                        {"adam", adam_json(s.adam)},
                        {"dice_weight", as_decimal(s.dice_weight)},
                        {"threshold", as_decimal(s.threshold)}};
  j["seeds"] = Json{{"root", c.seeds.root}, {"runs", c.seeds.runs}};
  if (with_paths) j["paths"] = Json{{"work_dir", c.work_dir.generic_string()}};
  return j;
}

void check(std::vector<std::string>& errors, bool ok, const std::string& key, const std::string& what) {
  if (!ok) errors.push_back(key + ": " + what);
}

void check_divisible(std::vector<std::string>& errors, const std::vector<int>& extents, int divisor,
                     const std::string& key, const std::string& arch_key) {
  for (int e : extents) {
    if (divisor > 0 && e % divisor != 0) {
      errors.push_back(key + ": extent " + std::to_string(e) + " is not divisible by " + std::to_string(divisor) +
                       " (required by " + arch_key + ".multipliers)");
      return;
    }
  }
}

void check_adam(std::vector<std::string>& errors, const nn::AdamConfig& a, const std::string& key) {
  check(errors, a.lr > 0.0f && std::isfinite(a.lr), key + ".lr", "must be > 0");
  check(errors, a.beta1 >= 0.0f && a.beta1 < 1.0f, key + ".beta1", "must be in [0, 1)");
  check(errors, a.beta2 >= 0.0f && a.beta2 < 1.0f, key + ".beta2", "must be in [0, 1)");
  check(errors, a.eps_hat > 0.0f, key + ".eps", "must be > 0");
}

}  // namespace

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return config_to_json(*this) == config_to_json(other);
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.schedule = ScheduleParams{100, 1e-3, 0.2};
  c.denoiser = UNetDenoiser::default_spec(3);
  return c;
}

std::vector<std::string> config_errors(const ExperimentConfig& c) {
  std::vector<std::string> errors;
  try {
    validate(c.phantom);
  } catch (const ArgumentError& e) {
    errors.push_back(std::string("phantom: ") + e.what());
  }
  check(errors, c.splits.train >= 1, "splits.train", "must be >= 1");
  check(errors, c.splits.val >= 1, "splits.val", "must be >= 1");
  check(errors, c.splits.test >= 1, "splits.test", "must be >= 1");

  check(errors, c.schedule.timesteps >= 1, "schedule.timesteps", "must be >= 1");
  check(errors, c.schedule.beta_start > 0.0 && c.schedule.beta_start <= c.schedule.beta_end,
        "schedule.beta_start", "must satisfy 0 < beta_start <= beta_end");
  check(errors, c.schedule.beta_end < 1.0, "schedule.beta_end", "must be < 1");

  const auto& img = c.phantom.image_size;
  if (c.patch_size.size() != img.size()) {
    errors.push_back("patch.size: rank " + std::to_string(c.patch_size.size()) + " does not match phantom.image_size");
  } else {
    for (std::size_t k = 0; k < img.size(); ++k) {
      if (c.patch_size[k] < 1 || c.patch_size[k] > img[k]) {
        errors.push_back("patch.size: " + shape_str(c.patch_size) + " does not fit in " + shape_str(img));
        break;
      }
    }
  }

  const int spatial = static_cast<int>(img.size());
  bool denoiser_ok = true;
  if (c.denoiser.in_channels != 2 + spatial || c.denoiser.out_channels != 1) {
    errors.push_back("denoiser: channel layout must be [x_t, mask, coords] -> eps");
    denoiser_ok = false;
  }
  try {
    nn::validate(c.denoiser);
  } catch (const ArgumentError& e) {
    errors.push_back(std::string("denoiser: ") + e.what());
    denoiser_ok = false;
  }
  if (denoiser_ok) {
    check(errors, c.denoiser.time_dim > 0, "denoiser.time_dim", "must be > 0");
    check_divisible(errors, img, c.denoiser.spatial_divisor(), "phantom.image_size", "denoiser");
    check_divisible(errors, c.patch_size, c.denoiser.spatial_divisor(), "patch.size", "denoiser");
  }

  const auto& d = c.diffusion_training;
  check(errors, d.steps >= 0, "diffusion_training.steps", "must be >= 0");
  check(errors, d.batch_size >= 1, "diffusion_training.batch_size", "must be >= 1");
  check_adam(errors, d.adam, "diffusion_training.adam");
  check(errors, d.log_every >= 1, "diffusion_training.log_every", "must be >= 1");
  check(errors, d.checkpoint_every >= 1, "diffusion_training.checkpoint_every", "must be >= 1");

  check(errors, c.sampling.clip_min < c.sampling.clip_max, "sampling.clip_min", "must be < sampling.clip_max");
  check(errors, c.sampling.samples_per_mask >= 1, "sampling.samples_per_mask", "must be >= 1");
  check(errors, c.sampling.targeted_per_mask >= 1, "sampling.targeted_per_mask", "must be >= 1");

  const auto& s = c.segmenter;
  try {
    nn::validate(s.arch);
    check_divisible(errors, img, s.arch.spatial_divisor(), "phantom.image_size", "segmenter.arch");
  } catch (const ArgumentError& e) {
    errors.push_back(std::string("segmenter.arch: ") + e.what());
  }
  check(errors, s.iterations >= 0, "segmenter.iterations", "must be >= 0");
  check(errors, s.batch_size >= 1, "segmenter.batch_size", "must be >= 1");
  check_adam(errors, s.adam, "segmenter.adam");
  check(errors, s.dice_weight >= 0.0f, "segmenter.dice_weight", "must be >= 0");
  check(errors, s.threshold > 0.0f && s.threshold < 1.0f, "segmenter.threshold", "must be in (0, 1)");

  const auto& runs = c.seeds.runs;
  if (!runs.empty()) {
    check(errors, static_cast<int>(runs.size()) == segeval::kRunsPerArm, "seeds.runs",
          "must list exactly " + std::to_string(segeval::kRunsPerArm) + " seeds (or be empty)");
    check(errors, std::set<std::uint64_t>(runs.begin(), runs.end()).size() == runs.size(), "seeds.runs",
          "seeds must be distinct");
  }
  check(errors, !c.work_dir.empty(), "paths.work_dir", "must not be empty");
  return errors;
}

void validate(const ExperimentConfig& config) {
  const auto errors = config_errors(config);
  if (errors.empty()) return;
  std::ostringstream os;
  os << "invalid config (" << errors.size() << (errors.size() == 1 ? " problem" : " problems") << "):";
  for (const auto& e : errors) os << "\n  " << e;
  throw ConfigError(os.str());
}

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  ExperimentConfig c = default_config();
  std::vector<std::string> errors;
  {
    Reader root(j, "", errors);
    {
      Reader r(root.object("phantom"), "phantom", errors);
      auto& p = c.phantom;
      r.get_list("image_size", p.image_size);
      r.get_array("nodule_count", p.nodule_count_range);
      r.get_array("nodule_radius", p.nodule_radius_range);
      r.get_array("vessel_count", p.vessel_count_range);
      r.get_array("vessel_radius", p.vessel_radius_range);
      {
        Reader i(r.object("intensity"), "phantom.intensity", errors);
        i.get("background", p.intensity.background);
        i.get("lung", p.intensity.lung);
        i.get("vessel", p.intensity.vessel);
        i.get("nodule", p.intensity.nodule);
      }
      r.get("noise_sigma", p.noise_sigma);
      r.get("allow_pleural_contact", p.allow_pleural_contact);
      r.get("pleural_contact_probability", p.pleural_contact_probability);
    }
    {
      Reader r(root.object("splits"), "splits", errors);
      r.get("train", c.splits.train);
      r.get("val", c.splits.val);
      r.get("test", c.splits.test);
    }
    {
      Reader r(root.object("schedule"), "schedule", errors);
      r.get("timesteps", c.schedule.timesteps);
      r.get("beta_start", c.schedule.beta_start);
      r.get("beta_end", c.schedule.beta_end);
    }
    {
      Reader r(root.object("patch"), "patch", errors);
      r.get_list("size", c.patch_size);
      r.get("oversample_nonempty", c.oversample_nonempty);
    }
    read_arch(root, "denoiser", c.denoiser, errors, true);
    {
      Reader r(root.object("diffusion_training"), "diffusion_training", errors);
      auto& d = c.diffusion_training;
      r.get("steps", d.steps);
      r.get("batch_size", d.batch_size);
      read_adam(r, "adam", d.adam, errors);
      r.get("log_every", d.log_every);
      r.get("checkpoint_every", d.checkpoint_every);
    }
    {
      Reader r(root.object("sampling"), "sampling", errors);
      r.get("clip_min", c.sampling.clip_min);
      r.get("clip_max", c.sampling.clip_max);
      r.get("samples_per_mask", c.sampling.samples_per_mask);
      r.get("targeted_per_mask", c.sampling.targeted_per_mask);
    }
    {
      Reader r(root.object("segmenter"), "segmenter", errors);
      auto& s = c.segmenter;
      read_arch(r, "arch", s.arch, errors, false);
      r.get("iterations", s.iterations);
      r.get("batch_size", s.batch_size);
      read_adam(r, "adam", s.adam, errors);
      r.get("dice_weight", s.dice_weight);
      r.get("threshold", s.threshold);
    }
    {
      Reader r(root.object("seeds"), "seeds", errors);
      r.get("root", c.seeds.root);
      r.get_list("runs", c.seeds.runs);
    }
    {
      Reader r(root.object("paths"), "paths", errors);
      std::string work = c.work_dir.string();
      r.get("work_dir", work);
      c.work_dir = work;
    }
  }
  c.denoiser.in_channels = 2 + static_cast<int>(c.phantom.image_size.size());
  for (auto& e : config_errors(c)) errors.push_back(std::move(e));
  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid config (" << errors.size() << (errors.size() == 1 ? " problem" : " problems") << "):";
    for (const auto& e : errors) os << "\n  " << e;
    throw ConfigError(os.str());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  try {
    bytes = detail::read_file(path.string());
  } catch (const Error& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = config_from_json(std::string(bytes.begin(), bytes.end()));
  if (c.work_dir.is_relative()) c.work_dir = path.parent_path() / c.work_dir;
  return c;
}

std::string config_to_json(const ExperimentConfig& config) { return config_json(config, true).dump(2) + "\n"; }

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(config_json(config, false).dump()); }

std::vector<std::uint64_t> run_seeds(const ExperimentConfig& config) {
  if (!config.seeds.runs.empty()) return config.seeds.runs;
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < segeval::kRunsPerArm; ++k) {
    seeds.push_back(derive_seed(config.seeds.root, kRunStream, static_cast<std::uint64_t>(k)));
  }
  return seeds;
}

}  // namespace pddpm::app
