#include "pddpm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bytes.hpp"
#include "json.hpp"
#include "pddpm/error.hpp"
#include "pddpm/hashing.hpp"
#include "pddpm/rng.hpp"

namespace pddpm {

namespace {

constexpr std::uint64_t kCaseStream = 0x70686e74;  // "phnt"
constexpr int kPlacementAttempts = 2000;

void require(bool ok, const std::string& what) {
  if (!ok) throw ArgumentError("phantom spec: " + what);
}

bool in_level_range(float v) { return v >= -1.0f && v <= 1.0f; }

struct Canvas {
  int h, w;
  bool inside(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
};

template <typename Fn>
void for_each_disk_pixel(const Disk& d, const Canvas& canvas, Fn&& fn) {
  const int y0 = static_cast<int>(std::floor(d.cy - d.radius));
  const int y1 = static_cast<int>(std::ceil(d.cy + d.radius));
  const int x0 = static_cast<int>(std::floor(d.cx - d.radius));
  const int x1 = static_cast<int>(std::ceil(d.cx + d.radius));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (canvas.inside(y, x) && d.contains(y, x)) fn(y, x);
}

bool disk_in_image(const Disk& d, const Canvas& canvas) {
  return d.cy - d.radius >= 0.0 && d.cx - d.radius >= 0.0 && d.cy + d.radius <= canvas.h - 1 &&
         d.cx + d.radius <= canvas.w - 1;
}

// Counts disk pixels that fall outside the lung field.
int pixels_outside(const Disk& d, const Ellipse& lung, const Canvas& canvas) {
  int n = 0;
  for_each_disk_pixel(d, canvas, [&](int y, int x) { n += lung.contains(y, x) ? 0 : 1; });
  return n;
}

std::pair<double, double> point_in_ellipse(const Ellipse& e, Rng& rng) {
  for (;;) {
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    if (u * u + v * v <= 1.0) return {e.cy + u * e.ry, e.cx + v * e.rx};
  }
}

}  // namespace

void validate(const PhantomSpec& spec) {
  require(spec.image_size.size() == 2, "image_size must have two extents");
  for (int e : spec.image_size) require(e >= 16, "image extents must be >= 16");
  require(spec.nodule_count_range[0] >= 0 && spec.nodule_count_range[0] <= spec.nodule_count_range[1],
          "nodule_count_range must satisfy 0 <= min <= max");
  require(spec.nodule_radius_range[0] >= 2.0, "nodule radius minimum must be >= 2 pixels");
  require(spec.nodule_radius_range[0] <= spec.nodule_radius_range[1], "nodule_radius_range must satisfy min <= max");
  require(spec.vessel_count_range[0] >= 0 && spec.vessel_count_range[0] <= spec.vessel_count_range[1],
          "vessel_count_range must satisfy 0 <= min <= max");
  require(spec.vessel_radius_range[0] > 0.0 && spec.vessel_radius_range[0] <= spec.vessel_radius_range[1],
          "vessel_radius_range must satisfy 0 < min <= max");
  require(in_level_range(spec.intensity.background) && in_level_range(spec.intensity.lung) &&
              in_level_range(spec.intensity.vessel) && in_level_range(spec.intensity.nodule),
          "intensity levels must lie in [-1, 1]");
  require(spec.noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(spec.pleural_contact_probability >= 0.0 && spec.pleural_contact_probability <= 1.0,
          "pleural_contact_probability must lie in [0, 1]");
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t case_seed) {
  validate(spec);
  Rng rng(case_seed);
  const int h = spec.image_size[0], w = spec.image_size[1];
  const Canvas canvas{h, w};
  PhantomMetadata meta;

  const double cy = h * (0.5 + rng.uniform(-0.03, 0.03));
  for (int side = 0; side < 2; ++side) {
    const double cx = w * ((side == 0 ? 0.29 : 0.71) + rng.uniform(-0.02, 0.02));
    meta.lungs[static_cast<std::size_t>(side)] =
        Ellipse{cy + rng.uniform(-1.0, 1.0), cx, h * rng.uniform(0.30, 0.36), w * rng.uniform(0.15, 0.19)};
  }

  Volume image(1, {h, w}, spec.intensity.background);
  Volume mask(1, {h, w}, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (meta.lungs[0].contains(y, x) || meta.lungs[1].contains(y, x)) image.at(0, y, x) = spec.intensity.lung;

  const int vessels = static_cast<int>(rng.uniform_int(spec.vessel_count_range[0], spec.vessel_count_range[1]));
  for (int i = 0; i < vessels; ++i) {
    const Ellipse& lung = meta.lungs[static_cast<std::size_t>(rng.uniform_int(0, 1))];
    const auto [vy, vx] = point_in_ellipse(lung, rng);
    const Disk vessel{vy, vx, rng.uniform(spec.vessel_radius_range[0], spec.vessel_radius_range[1])};
    for_each_disk_pixel(vessel, canvas, [&](int y, int x) {
      if (lung.contains(y, x)) image.at(0, y, x) = spec.intensity.vessel;
    });
    meta.vessels.push_back(vessel);
  }

  const int nodules = static_cast<int>(rng.uniform_int(spec.nodule_count_range[0], spec.nodule_count_range[1]));
  for (int i = 0; i < nodules; ++i) {
    const double radius = rng.uniform(spec.nodule_radius_range[0], spec.nodule_radius_range[1]);
    const bool pleural = spec.allow_pleural_contact && rng.uniform() < spec.pleural_contact_probability;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const Ellipse& lung = meta.lungs[static_cast<std::size_t>(rng.uniform_int(0, 1))];
      const auto [ny, nx] = point_in_ellipse(lung, rng);
      const Disk d{ny, nx, radius};
      if (!disk_in_image(d, canvas)) continue;
      const int outside = pixels_outside(d, lung, canvas);
      if (pleural ? outside == 0 : outside != 0) continue;
      const bool overlaps = std::any_of(meta.nodules.begin(), meta.nodules.end(), [&](const Disk& o) {
        return std::hypot(o.cy - d.cy, o.cx - d.cx) <= o.radius + d.radius + 1.0;
      });
      if (overlaps) continue;
      meta.nodules.push_back(d);
      meta.pleural_contact.push_back(pleural);
      placed = true;
    }
    if (!placed) {
      throw ArgumentError("phantom: could not place a " + std::string(pleural ? "pleural" : "interior") +
                          " nodule of radius " + std::to_string(radius) + " inside a lung field without overlap after " +
                          std::to_string(kPlacementAttempts) + " attempts");
    }
  }
  for (const Disk& d : meta.nodules) {
    for_each_disk_pixel(d, canvas, [&](int y, int x) {
      image.at(0, y, x) = spec.intensity.nodule;
      mask.at(0, y, x) = 1.0f;
    });
  }

  if (spec.noise_sigma > 0.0) {
    for (auto& v : image.data()) {
      v = std::clamp(v + static_cast<float>(spec.noise_sigma * rng.normal()), -1.0f, 1.0f);
    }
  }
  return Phantom{std::move(image), std::move(mask), std::move(meta)};
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ArgumentError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& case_id) const {
  for (const auto& e : entries)
    if (e.case_id == case_id) return &e;
  return nullptr;
}

DatasetManifest build_dataset(const PhantomSpec& spec, const SplitCounts& counts, std::uint64_t root_seed,
                              const std::filesystem::path& out_dir, const std::string& config_hash) {
  validate(spec);
  if (counts.train < 1 || counts.val < 1 || counts.test < 1) {
    throw ArgumentError("build_dataset: every split needs at least one case");
  }
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");
  DatasetManifest manifest;
  manifest.root_seed = root_seed;
  manifest.config_hash = config_hash;
  manifest.root = out_dir;
  for (int i = 0; i < counts.total(); ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "case_%04d", i);
    ManifestEntry e;
    e.case_id = id;
    e.split = i < counts.train ? Split::kTrain : (i < counts.train + counts.val ? Split::kVal : Split::kTest);
    e.seed = derive_seed(root_seed, kCaseStream, static_cast<std::uint64_t>(i));
    const Phantom p = generate_phantom(spec, e.seed);
    e.image = "images/" + e.case_id + ".pdv";
    e.mask = "masks/" + e.case_id + ".pdv";
    const auto image_bytes = encode_volume(p.image);
    const auto mask_bytes = encode_volume(p.mask);
    detail::write_file_atomic((out_dir / e.image).string(), image_bytes);
    detail::write_file_atomic((out_dir / e.mask).string(), mask_bytes);
    e.image_sha256 = sha256_hex(image_bytes);
    e.mask_sha256 = sha256_hex(mask_bytes);
    manifest.entries.push_back(std::move(e));
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  nlohmann::ordered_json j;
  j["kind"] = manifest.kind;
  j["root_seed"] = manifest.root_seed;
  j["config_hash"] = manifest.config_hash;
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json c;
    c["id"] = e.case_id;
    c["split"] = split_name(e.split);
    c["image"] = e.image;
    c["mask"] = e.mask;
    c["image_sha256"] = e.image_sha256;
    c["mask_sha256"] = e.mask_sha256;
    c["seed"] = e.seed;
    if (!e.source_case.empty()) c["source_case"] = e.source_case;
    j["cases"].push_back(std::move(c));
  }
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    const auto j = nlohmann::json::parse(text);
    m.kind = j.at("kind").get<std::string>();
    m.root_seed = j.at("root_seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& c : j.at("cases")) {
      ManifestEntry e;
      e.case_id = c.at("id").get<std::string>();
      e.split = parse_split(c.at("split").get<std::string>());
      e.image = c.at("image").get<std::string>();
      e.mask = c.at("mask").get<std::string>();
      e.image_sha256 = c.value("image_sha256", std::string());
      e.mask_sha256 = c.value("mask_sha256", std::string());
      e.seed = c.value("seed", std::uint64_t{0});
      e.source_case = c.value("source_case", std::string());
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest: " + std::string(e.what()));
  }
  check_split_hygiene(m);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  const std::string text = manifest_to_json(manifest);
  detail::write_file_atomic(path.string(),
                            std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path.string());
  return manifest_from_json(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

std::string manifest_hash(const DatasetManifest& manifest) { return sha256_hex(manifest_to_json(manifest)); }

void check_split_hygiene(const DatasetManifest& manifest) {
  std::set<std::string> seen;
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.case_id).second) throw DataError("manifest: case id '" + e.case_id + "' appears more than once");
  }
}

namespace {

// Reads one manifest file, refusing it when the recorded digest differs.
Volume load_checked(const DatasetManifest& manifest, const std::string& relative, const std::string& sha256) {
  const auto path = manifest.resolve(relative);
  const auto bytes = detail::read_file(path.string());
  if (!sha256.empty() && sha256_hex(bytes) != sha256) {
    throw DataError("manifest: " + path.string() + " does not match its recorded SHA-256");
  }
  return decode_volume(bytes);
}

}  // namespace

std::vector<LabeledCase> load_split(const DatasetManifest& manifest, Split split) {
  std::vector<LabeledCase> out;
  for (const ManifestEntry* e : manifest.split(split)) {
    out.push_back(LabeledCase{e->case_id, e->source_case, load_checked(manifest, e->image, e->image_sha256),
                              load_checked(manifest, e->mask, e->mask_sha256)});
    if (!out.back().image.same_extents(out.back().mask)) {
      throw DataError("manifest: image and mask extents differ for " + e->case_id);
    }
  }
  return out;
}

}  // namespace pddpm
