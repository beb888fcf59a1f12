#include "pddpm/nn/adam.hpp"

#include <cmath>

#include "pddpm/error.hpp"

namespace pddpm::nn {

void adam_step(ParamStore& params, const Gradients& grads, const AdamConfig& config) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw ArgumentError("adam: gradient for unknown parameter '" + name + "'");
    if (g.shape() != params.at(name).shape()) {
      throw ShapeError("adam: gradient " + shape_str(g.shape()) + " for '" + name + "' of shape " +
                       shape_str(params.at(name).shape()));
    }
    for (float v : g.data()) {
      if (!std::isfinite(v)) throw NumericalError("adam: non-finite gradient in parameter '" + name + "'");
    }
  }

  const std::uint64_t step = params.step() + 1;
  const double bias1 = 1.0 - std::pow(static_cast<double>(config.beta1), static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(static_cast<double>(config.beta2), static_cast<double>(step));
  const float b1 = config.beta1;
  const float b2 = config.beta2;

  for (auto& entry : params.entries()) {
    auto it = grads.find(entry.name);
    auto value = entry.value.data();
    auto m = entry.first_moment.data();
    auto v = entry.second_moment.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = it == grads.end() ? 0.0f : it->second[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      value[i] -= static_cast<float>(config.lr * m_hat / (std::sqrt(v_hat) + config.eps_hat));
    }
  }
  params.set_step(step);
}

}  // namespace pddpm::nn
