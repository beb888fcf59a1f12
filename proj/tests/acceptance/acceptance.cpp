// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any hard criterion fails; the desk-scale DSC ratio is a soft check and
// only reported.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pddpm/app/config.hpp"
#include "pddpm/app/pipeline.hpp"
#include "pddpm/diffusion.hpp"
#include "pddpm/hashing.hpp"
#include "pddpm/patching.hpp"
#include "pddpm/phantom.hpp"
#include "pddpm/rng.hpp"
#include "pddpm/schedule.hpp"
#include "pddpm/segeval/dice.hpp"
#include "pddpm/segeval/experiment.hpp"
#include "pddpm/segeval/stats.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace pddpm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool soft = false;  // failure is reported but does not fail the suite
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

void note(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

// ---- 1

Outcome welch_reproduction() {
  const double p = segeval::welch_p_value(0.4913, 0.02733, 5, 0.5418, 0.03015, 5);
  return {std::abs(p - 0.024335) <= 0.003, fmt("p = %.6f, reference 0.024335, |diff| = %.6f", p, std::abs(p - 0.024335))};
}

// ---- 2

Outcome forward_consistency() {
  const auto schedule = NoiseSchedule::linear(100, 1e-3, 0.2);
  const int trials = 10000;
  Volume x0(1, {4, 4});
  for (int i = 0; i < 16; ++i) x0.data()[static_cast<std::size_t>(i)] = -0.9f + 0.12f * static_cast<float>(i);
  const std::size_t n = x0.data().size();
  double worst_mean = 0.0, worst_var = 0.0;
  std::string where;
  for (int t : {1, 50, 100}) {
    std::vector<double> s_chain(n), q_chain(n), s_marg(n), q_marg(n);
    Rng chain_rng(derive_seed(2, 1, static_cast<std::uint64_t>(t)));
    Rng marg_rng(derive_seed(2, 2, static_cast<std::uint64_t>(t)));
    Volume eps(1, {4, 4});
    for (int k = 0; k < trials; ++k) {
      Volume x = x0;
      for (int s = 1; s <= t; ++s) x = forward_step(x, s, schedule, chain_rng);
      marg_rng.fill_normal(eps.data());
      const Volume y = forward_marginal(x0, t, eps, schedule);
      for (std::size_t i = 0; i < n; ++i) {
        s_chain[i] += x.data()[i];
        q_chain[i] += double(x.data()[i]) * x.data()[i];
        s_marg[i] += y.data()[i];
        q_marg[i] += double(y.data()[i]) * y.data()[i];
      }
    }
    // Variance pooled over pixels (it does not depend on the pixel); means
    // per pixel, relative to max(|mean|, std) so near-zero means at large t
    // are compared on the scale of the distribution.
    double var_chain = 0.0, var_marg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mc = s_chain[i] / trials, mm = s_marg[i] / trials;
      const double vc = q_chain[i] / trials - mc * mc, vm = q_marg[i] / trials - mm * mm;
      var_chain += vc / static_cast<double>(n);
      var_marg += vm / static_cast<double>(n);
      const double scale = std::max({std::abs(mc), std::abs(mm), std::sqrt(vm)});
      const double rel = std::abs(mc - mm) / scale;
      if (rel > worst_mean) {
        worst_mean = rel;
        where = fmt("t=%d", t);
      }
    }
    const double rel_var = std::abs(var_chain - var_marg) / var_marg;
    worst_var = std::max(worst_var, rel_var);
    note(fmt("forward t=%d: variance chained %.6g vs closed form %.6g (analytic %.6g)", t, var_chain, var_marg,
             1.0 - schedule.alpha_bar(t)));
  }
  return {worst_mean < 0.05 && worst_var < 0.05,
          fmt("T=100, %d trials; worst mean rel err %.4f (%s), worst variance rel err %.4f", trials, worst_mean,
              where.c_str(), worst_var)};
}

// ---- 3

Outcome gradient_check() {
  UNetDenoiser model(UNetDenoiser::default_spec(3), 11);
  const auto schedule = NoiseSchedule::linear(100, 1e-3, 0.2);
  std::vector<TrainingPair> cases;
  for (std::uint64_t s = 0; s < 2; ++s) {
    auto p = generate_phantom(PhantomSpec{}, s);
    cases.push_back({std::move(p.image), std::move(p.mask)});
  }
  const auto grid = coordinate_grid(std::vector<int>{64, 64});
  Rng rng(5);
  const auto batch = draw_batch(cases, 2, grid, PatchOptions{{16, 16}, true}, CropMode::kPatch, schedule, rng);

  std::vector<Tensor> noisy, cond, target;
  std::vector<int> ts;
  for (const auto& s : batch) {
    noisy.push_back(s.noisy_patch.to_tensor());
    cond.push_back(assemble_condition(s.mask_patch, s.coord_patch).to_tensor());
    target.push_back(s.target_noise.to_tensor());
    ts.push_back(s.t);
  }
  const Tensor x = stack_batch(noisy), c = stack_batch(cond), e = stack_batch(target);
  auto predict = [&](nn::Tape& t) { return model.predict(t, t.input(x), t.input(c), ts); };
  auto loss = [&](nn::Tape& t, const nn::ParamStore&) { return nn::mse(t, predict(t), t.input(e)); };
  auto numeric = [&](const nn::ParamStore&) {
    nn::Tape t;
    t.set_grad_enabled(false);
    return pddpm::testing::mse_double(t.value(predict(t)), e);
  };
  // Same loss as the training path.
  const float production = training_loss(model, batch, schedule).loss;
  const float rebuilt = pddpm::testing::eval_loss(loss, model.params());
  const auto r = pddpm::testing::check_gradients(model.params(), loss, 200, 2e-2f, 17, numeric);
  return {production == rebuilt && r.checked >= 100 && r.max_rel_error < 1e-2,
          fmt("default denoiser (%zu params), 16x16 patches, %d sampled entries, max rel err %.5f [%s]",
              model.params().parameter_count(), r.checked, r.max_rel_error, r.worst.c_str())};
}

// ---- 4

Outcome degenerate_oracle() {
  const auto schedule = NoiseSchedule::linear(100, 1e-3, 0.2);
  UNetDenoiser model(UNetDenoiser::default_spec(3), 21);
  const std::vector<int> ext{32, 32};
  const std::vector<TrainingPair> cases{{Volume(1, ext, 0.5f), Volume(1, ext)}};
  const auto grid = coordinate_grid(ext);
  const nn::AdamConfig adam{1e-3f, 0.9f, 0.999f, 1e-8f};
  const int steps = 1500;
  float tail = 0.0f;
  for (int step = 0; step < steps; ++step) {
    Rng rng(derive_seed(4, 1, static_cast<std::uint64_t>(step)));
    const auto batch = draw_batch(cases, 8, grid, PatchOptions{{16, 16}}, CropMode::kPatch, schedule, rng);
    const float l = train_step(model, batch, schedule, adam).loss;
    if (step >= steps - 50) tail += l / 50.0f;
  }
  const Volume condition = full_condition(Volume(1, ext), grid);
  double total = 0.0;
  const int samples = 4;
  std::string per;
  for (int k = 0; k < samples; ++k) {
    Rng rng(derive_seed(4, 2, static_cast<std::uint64_t>(k)));
    const Volume img = sample(model, condition, schedule, rng);
    double m = 0.0;
    for (float v : img.data()) m += v;
    m /= static_cast<double>(img.data().size());
    per += fmt("%s%.3f", k ? " " : "", m);
    total += m / samples;
  }
  return {total >= 0.4 && total <= 0.6,
          fmt("c=0.5, 32x32, T=100, %d steps (final loss %.4f); sample mean %.4f (per sample: %s)", steps, tail, total,
              per.c_str())};
}

// ---- 5

Outcome patch_degenerate() {
  const auto schedule = NoiseSchedule::linear(100, 1e-3, 0.2);
  PhantomSpec spec;
  spec.image_size = {32, 32};
  spec.nodule_radius_range = {2.0, 4.0};
  std::vector<TrainingPair> cases;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto p = generate_phantom(spec, s);
    cases.push_back({std::move(p.image), std::move(p.mask)});
  }
  const auto grid = coordinate_grid(spec.image_size);
  const nn::AdamConfig adam{};
  UNetDenoiser patch_model(UNetDenoiser::default_spec(3), 31), full_model(UNetDenoiser::default_spec(3), 31);
  int equal = 0;
  float first_diff = 0.0f;
  for (int step = 0; step < 50; ++step) {
    const std::uint64_t seed = derive_seed(5, 1, static_cast<std::uint64_t>(step));
    Rng a(seed), b(seed);
    const auto pb = draw_batch(cases, 2, grid, PatchOptions{{32, 32}}, CropMode::kPatch, schedule, a);
    const auto fb = draw_batch(cases, 2, grid, PatchOptions{{32, 32}}, CropMode::kFullImage, schedule, b);
    const float lp = train_step(patch_model, pb, schedule, adam).loss;
    const float lf = train_step(full_model, fb, schedule, adam).loss;
    if (std::memcmp(&lp, &lf, sizeof(float)) == 0) {
      ++equal;
    } else if (first_diff == 0.0f) {
      first_diff = lp - lf;
    }
  }
  return {equal == 50, fmt("%d/50 per-step losses bitwise equal%s", equal,
                           equal == 50 ? "" : fmt(" (first difference %g)", first_diff).c_str())};
}

// ---- 6

Outcome activation_ratio() {
  const auto schedule = NoiseSchedule::linear(100, 1e-3, 0.2);
  std::vector<TrainingPair> cases;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto p = generate_phantom(PhantomSpec{}, s);
    cases.push_back({std::move(p.image), std::move(p.mask)});
  }
  const auto grid = coordinate_grid(std::vector<int>{64, 64});
  auto count = [&](CropMode mode) {
    UNetDenoiser model(UNetDenoiser::default_spec(3), 41);
    Rng rng(6);
    const auto batch = draw_batch(cases, 8, grid, PatchOptions{{32, 32}}, mode, schedule, rng);
    return train_step(model, batch, schedule, nn::AdamConfig{}).activation_elements;
  };
  const std::size_t patch = count(CropMode::kPatch), full = count(CropMode::kFullImage);
  const double ratio = static_cast<double>(patch) / static_cast<double>(full);
  return {std::abs(ratio - 0.25) <= 0.025,
          fmt("activation elements per step: patch 32x32 %zu, full 64x64 %zu, ratio %.4f", patch, full, ratio)};
}

// ---- 7

Outcome dice_exhaustive() {
  std::vector<Volume> masks;
  for (int bits = 0; bits < 512; ++bits) {
    Volume v(1, {3, 3});
    for (int i = 0; i < 9; ++i) v.data()[static_cast<std::size_t>(i)] = (bits >> i) & 1 ? 1.0f : 0.0f;
    masks.push_back(std::move(v));
  }
  long mismatches = 0, pairs = 0;
  for (int a = 0; a < 512; ++a) {
    std::set<int> sa;
    for (int i = 0; i < 9; ++i)
      if ((a >> i) & 1) sa.insert(i);
    for (int b = 0; b < 512; ++b) {
      std::set<int> sb;
      for (int i = 0; i < 9; ++i)
        if ((b >> i) & 1) sb.insert(i);
      int inter = 0;
      for (int i : sa) inter += static_cast<int>(sb.count(i));
      const double expected = sa.empty() && sb.empty()
                                  ? 1.0
                                  : 2.0 * inter / static_cast<double>(sa.size() + sb.size());
      mismatches += segeval::dice(masks[static_cast<std::size_t>(a)], masks[static_cast<std::size_t>(b)]).dsc != expected;
      ++pairs;
    }
  }
  return {mismatches == 0 && pairs == (1L << 18), fmt("%ld pairs, %ld mismatches against set-based Dice", pairs, mismatches)};
}

// ---- 8

std::vector<float> logged_losses(const fs::path& log, std::size_t n) {
  std::ifstream in(log);
  std::vector<float> out;
  std::string line;
  while (out.size() < n && std::getline(in, line)) out.push_back(nlohmann::json::parse(line).at("loss").get<float>());
  return out;
}

Outcome desk_experiment(const fs::path& work, bool reuse) {
  auto config = app::load_config(fs::path(PDDPM_CONFIG_DIR) / "default.json");
  config.work_dir = work / "desk";
  const auto lay = app::layout(config);
  const auto started = std::chrono::steady_clock::now();
  std::vector<segeval::UtilityReport> reports;
  if (reuse && fs::exists(lay.report(segeval::Arm::kTargeted))) {
    note("reusing finished desk run in " + lay.root.string());
    reports = app::load_reports(config);
  } else {
    fs::remove_all(lay.root);
    reports = app::run_pipeline(config, [](const std::string& m) { note(m); });
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count() / 60.0;
  if (reports.size() != 3) return {false, fmt("pipeline produced %zu reports, expected 3", reports.size())};
  const auto& real = reports[0];
  const auto& syn = reports[1];
  const auto& tgt = reports[2];

  // Determinism, re-derived piecewise from the same root seed.
  std::vector<std::string> broken;
  const fs::path check = work / "recheck";
  fs::remove_all(check);
  auto probe = config;
  probe.work_dir = check;
  const auto data = load_manifest(lay.data_manifest());
  if (manifest_hash(app::make_data(config, check / "data")) != manifest_hash(data)) broken.push_back("dataset");

  probe.diffusion_training.steps = 50;
  const auto probe_data = app::make_data(probe, app::layout(probe).data_dir());
  const auto rerun = app::train_diffusion(
      probe, probe_data, app::TrainDiffusionOptions{check / "probe.pdck", check / "probe.jsonl"});
  if (rerun.losses != logged_losses(lay.train_log(), 50)) broken.push_back("diffusion training trajectory");

  const auto denoiser = app::load_denoiser(lay.checkpoint());
  const auto syn_manifest = load_manifest(lay.synthetic_manifest(segeval::Arm::kSynthetic));
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 2 && i < syn_manifest.entries.size(); ++i) ids.push_back(syn_manifest.entries[i].source_case);
  const auto resampled = app::sample_dataset(denoiser, app::mask_sources(data, ids), 1, app::sampling_seed(config),
                                             SampleOptions{config.sampling.clip_min, config.sampling.clip_max},
                                             check / "resample", app::config_hash(config));
  for (std::size_t i = 0; i < resampled.entries.size(); ++i) {
    if (resampled.entries[i].image_sha256 != syn_manifest.entries[i].image_sha256) broken.push_back("sample " + ids[i]);
  }

  const auto real_data = app::arm_data(config, segeval::Arm::kReal);
  const auto seg = segeval::train_segmenter(real_data.train, real.runs[0].seed, config.segmenter);
  const auto rescored = segeval::score_cases(seg, real_data.test, config.segmenter.threshold);
  bool same = rescored.size() == real.runs[0].test.size();
  double sum = 0.0;
  for (std::size_t i = 0; same && i < rescored.size(); ++i) {
    same = rescored[i].dsc == real.runs[0].test[i].dsc;
    sum += rescored[i].dsc;
  }
  // same summation order as the report
  if (!same || sum / static_cast<double>(rescored.size()) != real.runs[0].mean_test_dsc) {
    broken.push_back("segmenter run 1");
  }
  fs::remove_all(check);

  const double ratio = syn.stats.mean / real.stats.mean;
  std::ostringstream os;
  os << fmt("real %.4f +/- %.4f, synthetic %.4f +/- %.4f (p %.4g), real+targeted %.4f +/- %.4f (p %.4g, %zu targeted cases); "
            "synthetic/real = %.3f (need >= 0.70); %.1f min",
            real.stats.mean, real.stats.std, syn.stats.mean, syn.stats.std, syn.p_value.value_or(-1.0), tgt.stats.mean,
            tgt.stats.std, tgt.p_value.value_or(-1.0), tgt.targeted_cases.size(), ratio, minutes);
  if (!broken.empty()) {
    os << "; NOT reproducible:";
    for (const auto& b : broken) os << " " << b << ";";
    return {false, os.str()};
  }
  os << "; dataset, training trajectory, samples and segmenter re-derived identically";
  Outcome o{ratio >= 0.70, os.str(), true};
  if (!o.pass) {
    o.detail += "\n    soft failure: synthetic-only segmenters fall short of 70% of the real benchmark at desk scale";
    o.detail += "\n    " + app::report_text(reports);
  }
  return o;
}

// ---- 9

Outcome worst_selection() {
  Rng rng(9);
  int mismatched = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(0, 60));
    std::vector<segeval::CaseScore> scores;
    for (int i = 0; i < n; ++i) {
      // Coarse grid so ties with the threshold occur.
      const double dsc = rng.uniform() < 0.3 ? std::round(rng.uniform() * 20) / 20 : rng.uniform();
      scores.push_back({fmt("case_%03d", i), dsc});
    }
    double baseline = std::round(rng.uniform() * 20) / 20;
    if (!scores.empty() && rng.uniform() < 0.3) baseline = scores[static_cast<std::size_t>(rng.uniform_int(0, n - 1))].dsc;
    std::set<std::string> brute;
    for (const auto& s : scores)
      if (s.dsc < baseline) brute.insert(s.case_id);
    const auto got = segeval::select_worst(scores, baseline);
    if (std::set<std::string>(got.begin(), got.end()) != brute || got.size() != brute.size()) ++mismatched;
  }
  return {mismatched == 0, fmt("1000 randomized result sets, %d disagreements with brute-force strict filter", mismatched)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Acceptance criteria 1-9"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool reuse = false;
  cli.add_option("--work", work, "Scratch directory for the desk experiment");
  cli.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  cli.add_flag("--reuse", reuse, "Reuse a finished desk run instead of starting fresh");
  CLI11_PARSE(cli, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"Welch p-value reproduction", welch_reproduction},
      {"forward-process consistency", forward_consistency},
      {"gradient correctness", gradient_check},
      {"degenerate-distribution sampling", degenerate_oracle},
      {"patch-degenerate equivalence", patch_degenerate},
      {"activation memory ratio", activation_ratio},
      {"Dice exhaustive oracle", dice_exhaustive},
      {"end-to-end desk experiment", [&] { return desk_experiment(work, reuse); }},
      {"worst-sample selection", worst_selection},
  };
  int hard_failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* verdict = o.pass ? "PASS" : (o.soft ? "FAIL (soft)" : "FAIL");
    std::printf("criterion %d %s: %s  [%s] (%.1fs)\n", id, verdict, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass && !o.soft) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
