#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pddpm/nn/ops.hpp"
#include "pddpm/nn/param_store.hpp"
#include "pddpm/nn/tape.hpp"
#include "pddpm/rng.hpp"
#include "pddpm/tensor.hpp"

namespace pddpm::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float scale = 1.0f) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data());
  for (auto& v : t.data()) v *= scale;
  return t;
}

// Relative error with an absolute floor: tiny gradients are compared
// absolutely, so float32 round-off on near-zero entries does not dominate.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

using LossFn = std::function<nn::Var(nn::Tape&, const nn::ParamStore&)>;

inline float eval_loss(const LossFn& loss_fn, const nn::ParamStore& params) {
  nn::Tape tape;
  tape.set_grad_enabled(false);
  return tape.value(loss_fn(tape, params))[0];
}

// Optional higher-precision evaluation of the same loss for the numeric side;
// the final float32 rounding of a scalar loss otherwise dominates the
// difference quotient for small gradients.
using NumericLossFn = std::function<double(const nn::ParamStore&)>;

// Mean squared error reduced in double over a network output.
inline double mse_double(const Tensor& pred, const Tensor& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

// Central differences on `samples` randomly chosen scalar entries across all
// parameters (every entry when samples <= 0).
inline GradCheckResult check_gradients(nn::ParamStore& params, const LossFn& loss_fn, int samples = 0,
                                       float eps = 1e-3f, std::uint64_t seed = 99,
                                       const NumericLossFn& numeric_loss = {}) {
  auto evaluate = [&](const nn::ParamStore& ps) -> double {
    return numeric_loss ? numeric_loss(ps) : eval_loss(loss_fn, ps);
  };
  nn::Tape tape;
  const nn::Var loss = loss_fn(tape, params);
  const nn::Gradients grads = tape.backward(loss, params);

  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& e : params.entries())
    for (std::size_t i = 0; i < e.value.size(); ++i) coords.emplace_back(e.name, i);
  if (samples > 0 && static_cast<std::size_t>(samples) < coords.size()) {
    std::mt19937_64 gen(seed);
    std::shuffle(coords.begin(), coords.end(), gen);
    coords.resize(static_cast<std::size_t>(samples));
  }
  GradCheckResult out;
  for (const auto& [name, i] : coords) {
    Tensor& p = params.at(name);
    const float orig = p[i];
    p[i] = orig + eps;
    const double up = evaluate(params);
    p[i] = orig - eps;
    const double down = evaluate(params);
    p[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = grads.at(name)[i];
    const double err = relative_error(analytic, numeric);
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                  std::to_string(numeric);
    }
    ++out.checked;
  }
  return out;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("pddpm_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace pddpm::testing
